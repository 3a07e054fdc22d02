pub mod codegen;
pub mod decompose;
pub mod expr;
pub mod harness;
pub mod ncp;
pub mod netsim;
pub mod pps;
