#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod es;
pub mod finder;
pub mod flow;
pub mod lognorm;
pub mod planar;
pub mod poly;
pub mod quadrature;
pub mod region;
