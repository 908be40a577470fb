pub mod experiment;
pub mod localrate;
pub mod numerics;
pub mod params;
pub mod penalties;
pub mod plot;
pub mod problems;
pub mod solver;
