mod embed;
mod scheduler;
mod teacher;

pub use embed::{StudentEmbedder, StudentState};
pub use scheduler::{
    entropy, entropy_penalty, entropy_penalty_logit_grad, sample_nodes, score_logit_grad,
    Scheduler, SchedulerConfig, SchedulerStep,
};
pub use teacher::{compute_reward, ActionValue, LearnOutcome, Teacher, TeacherConfig, Transition};
