pub mod filestore;
pub mod harness;
pub mod ids;
pub mod msg;
pub mod net;
pub mod tlock;
pub mod trace;
pub mod txn;
pub mod world;
