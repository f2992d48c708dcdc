pub mod blocksworld;
pub mod config;
pub mod curriculum;
pub mod gateway;
pub mod harness;
pub mod pddl;
pub mod planner;
pub mod translator;
pub mod validator;
