//! Exact finite-instance comparisons of experiments: total variation,
//! couplings, Markov kernels, deficiency upper bounds and protocol transfer.

mod deficiency;
mod lemmas;
mod measure;
mod suite;
mod transfer;

pub use deficiency::{
    binomial_measure, carter_direction, deficiency_upper, deficiency_upper_with, discretize_gaussian,
    CarterRow, DeficiencyBound, Discretized, Grid2, RootSmoother, TwoCellPair, DEFAULT_BINS, DEFAULT_WIDTH_SD,
    OVERFLOW,
};
pub use lemmas::{
    check_data_processing, check_product_bound, gaussian_max_check, hellinger_l1_check, pinsker_gaussian_check,
    product_tv, DataProcessing, GaussianMaxReport, HellingerCheck, PinskerCheck, ProductBound, CHECK_TOL, PRODUCT_LIMIT,
};
pub use measure::{
    apply_kernel, maximal_coupling, tv_by_events, tv_exact, FiniteMeasure, KernelMatrix, MarkovKernel, MaximalCoupling,
    MASS_TOL,
};
pub use suite::{
    coupling_suite, dp_certificate_matrix, lemma_suite, random_measure, CouplingRow, DpRow, SuiteRow, DP_CLIPS, DP_DELTAS,
    DP_DIMS, DP_EPSILONS,
};
pub use transfer::{
    all_tests, exact_risk, kernel_dp_certificate, protocol_transfer, reachable_payloads, risk_gap_check, transcript_law,
    ExactRisk, FiniteExperiment, FiniteProtocol, KernelDpCertificate, LocalRule, TransferCheck, TwoCellTransfer,
    OUTCOME_LIMIT,
};
