//! Variational formulation of steady periodic two-layer stratified water
//! waves: the energy functional, its first and second variations, laminar
//! reference flows and a finite-basis stability test.

pub mod energy;
pub mod error;
pub mod geometry;
pub mod hessian;
pub mod laminar;
pub mod numerics;
pub mod profiles;
pub mod state;

pub use energy::{
    audit_criticality, eval_h, fd_first_variation, first_variation, pde_residual, AuditReport,
    AuditTolerances, GravityRefs, ResidualReport, VariationBreakdown,
};
pub use error::{Error, Result};
pub use geometry::{
    build_domain, build_grids, Boundary, Field, FlowDomain, LayerGrid, Measure, SurfaceCurve,
};
pub use hessian::{
    assemble_hessian, build_basis, fd_second_variation, quadratic_form, second_variation,
    spectrum_edge, stability_verdict, BasisOptions, HessianMatrix, SecondVariationReading,
    StabilityOptions, StabilityVerdict, Verdict,
};
pub use laminar::{
    lift_to_state, manufacture_from_streamfunction, maps_for_state, recover_physical,
    solve_laminar, warp_to_domain, LaminarFlow, LaminarOptions,
};
pub use profiles::{
    build_bernoulli_map, validate_profiles, BernoulliMap, Layer, LayerProfiles, ScalarProfile,
};
pub use state::{
    assemble_state, check_admissible, project_admissible, random_admissible, FlowState,
    Perturbation, PhysicalParams,
};
