#![no_std]

extern crate alloc;

pub mod abstraction;
pub mod apa;
pub mod composition;
pub mod consistency;
pub mod constraint;
pub mod guard;
pub mod iso;
pub mod lp;
pub mod model;
pub mod num;
pub mod region;
pub mod relations;
