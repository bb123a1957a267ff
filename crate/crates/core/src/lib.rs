//! Probabilistic available delivery capability (ADC) engine for unbalanced
//! three-phase distribution feeders.
//!
//! The crate combines a continuation power flow solver with an adaptive
//! sparse polynomial chaos surrogate so that the probability distribution of
//! the feeder's delivery margin can be estimated from a small number of
//! deterministic continuation solves. The main layers are:
//!
//! * [`dist`] — univariate marginals and Latin hypercube sampling,
//! * [`orthopoly`] — orthonormal polynomial bases and Gaussian quadrature,
//! * [`nataf`] — normal-copula dependence modeling and the isoprobabilistic
//!   transformations between physical and standard spaces,
//! * [`spce`] — the sparse polynomial chaos engine (hyperbolic truncation,
//!   least angle regression, corrected leave-one-out model selection),
//! * [`feeder`] — the network data model, renewable power curves and the
//!   load-generation variation vector,
//! * [`cpf`] — three-phase Newton power flow and predictor-corrector
//!   continuation with limit extraction,
//! * [`study`] — orchestration of the full probabilistic study and the
//!   Latin-hypercube Monte Carlo baseline.


pub mod cpf;
pub mod dist;
pub mod feeder;


pub mod nataf;
pub mod orthopoly;
pub(crate) mod roots;
pub mod spce;


