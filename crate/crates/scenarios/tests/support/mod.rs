#![allow(dead_code)]

pub mod crash;
pub mod dag;
pub mod fuzz;
pub mod model;
pub mod scan;
pub mod search;
pub mod world;
