pub mod agent;
pub mod const_h;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod scenario;
pub mod tariff;
pub mod typed_h;
pub mod uconvex;
