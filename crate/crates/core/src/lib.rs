pub mod dataset;
pub mod diffmath;
pub mod evalkit;
pub mod mdp;
pub mod nets;
pub mod objectives;
pub mod synthetic;
pub mod trainer;
