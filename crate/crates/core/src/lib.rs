//! A small stack virtual machine whose classic call instructions can be
//! rewritten into dynamic call sites and patched while programs run.

pub mod handles;
pub mod interp;
pub mod isa;
pub mod patch;
pub mod transform;
pub mod corpus;
pub mod batch;
pub mod bench;
