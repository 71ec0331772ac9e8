//! Aggregate queries: parsing, exact evaluation, sample estimates, and
//! error metrics.

mod estimate;
mod metrics;
mod query;
mod report;
mod workload;

pub use estimate::{
    estimate_from_sample, estimate_weighted, evaluate_exact, selectivity, AggregateEstimate, ExactResult,
    GroupEstimate, GroupKey,
};
pub use metrics::{
    median, percentile, query_error, relative_error, relative_error_difference, workload_average, QueryError,
};
pub use query::{parse_query, Aggregate, BoundQuery, CmpOp, Filter, Literal, Predicate, QueryAst};
pub use workload::{generate_workload, Stratum, Workload, WorkloadQuery, MAX_GROUP_DOMAIN};
pub use report::{
    evaluate_workload, uniform_sample, ErrorReport, EvaluationConfig, QueryReport, DEFAULT_REPETITIONS,
    DEFAULT_SAMPLE_FRACTION,
};
