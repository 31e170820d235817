pub mod baseline;
pub mod crypto;
pub mod gf256;
pub mod netsim;
pub mod protocol;
pub mod rlnc;
pub mod rugby;
