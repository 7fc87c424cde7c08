mod eval;
mod metrics;
mod node;
mod state;

pub use eval::{accuracy_of, auc_rank, binary_auc, evaluate, Evaluation};
pub use metrics::{metrics_header, read_metrics, read_metrics_from, MetricsRow, MetricsWriter};
pub use node::{corrupt_one_matrix, CurriculumSpec, Node, NodeStatus, RankSpace};
pub use state::{
    aggregate_validation_losses, check_disjoint, fedavg_combine, inner_train_step, local_train,
    pretrain_teacher, FederationState, InnerStep, Selection,
};
