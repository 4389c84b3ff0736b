use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::ingestion::IngestError;
use crate::model::{JobId, ModelError, Money, UnitId};
use crate::quality::QualityError;
use crate::storage::StoreError;

/// Errors from platform operations. [`Error::code`] gives the stable
/// machine-readable name used on the wire.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("{0} not found")]
    NotFound(String),
    #[error("not allowed")]
    Forbidden,
    #[error("unknown or expired session")]
    Unauthenticated,
    #[error("invalid credentials")]
    InvalidCredentials,

    #[error("job {0} is not a draft")]
    NotDraft(JobId),
    #[error("job {0} is already published")]
    AlreadyPublished(JobId),
    #[error("job {0} already has input data")]
    AlreadyHasData(JobId),
    #[error("job {0} has no input data")]
    NoData(JobId),
    #[error("unit {0} does not belong to this job")]
    UnknownUnit(UnitId),
    #[error("invalid gold answer: {0}")]
    InvalidGold(String),

    #[error("job {0} is not accepting reservations")]
    JobNotOpen(JobId),
    #[error("worker is not eligible for this job")]
    NotEligible,
    #[error("worker already holds a live reservation on this job")]
    AlreadyReserved,
    #[error("nothing left to claim")]
    NothingAvailable,
    #[error("reservation has expired")]
    ReservationExpired,
    #[error("instance is reserved by another worker")]
    NotReserver,
    #[error("instance was already submitted")]
    AlreadySubmitted,
    #[error("unit {unit} is missing answer field {field:?}")]
    MissingAnswerField { unit: UnitId, field: String },
    #[error("unit {unit}, field {field:?}: {reason}")]
    InvalidAnswer {
        unit: UnitId,
        field: String,
        reason: String,
    },
    #[error("unit {0} is not part of this instance")]
    UnexpectedUnit(UnitId),
    #[error("worker already judged unit {0}")]
    DuplicateJudgment(UnitId),

    #[error("instance was already credited")]
    AlreadyCredited,
    #[error("unknown instance")]
    UnknownInstance,
    #[error("instance has not been submitted by this worker")]
    NotSubmitted,
    #[error("insufficient funds: balance {balance}, price {price}")]
    InsufficientFunds { balance: Money, price: Money },
    #[error("reward is sold out")]
    SoldOut,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(e) => match e {
                ModelError::MissingField(_) => "missing_field",
                ModelError::InvalidBatchSize => "invalid_batch_size",
                ModelError::InvalidMinJudgments => "invalid_min_judgments",
                ModelError::InvalidReward => "invalid_reward",
                ModelError::UnknownCategory(_) => "unknown_category",
                ModelError::DanglingPreselectionRef(_) => "dangling_preselection_ref",
                ModelError::InvalidField(_) => "invalid_field",
                ModelError::InvalidSimilarityRule { .. } => "invalid_similarity_rule",
                ModelError::UnknownContext(_) => "unknown_context",
                ModelError::NegativeDuration => "negative_duration",
                ModelError::InvalidId(_) => "invalid_id",
            },
            Error::Ingest(e) => match e {
                IngestError::NotUtf8 => "not_utf8",
                IngestError::EmptyHeader => "empty_header",
                IngestError::DuplicateColumn(_) => "duplicate_column",
                IngestError::RaggedRow(_) => "ragged_row",
                IngestError::Malformed(_) => "malformed_csv",
                IngestError::EmptyHashtag => "empty_hashtag",
                IngestError::InvalidLimit => "invalid_limit",
                IngestError::UnknownAdapter(_) => "unknown_adapter",
                IngestError::AdapterFailure(_) => "adapter_failure",
            },
            Error::Quality(e) => match e {
                QualityError::KindMismatch { .. } => "kind_mismatch",
                QualityError::MissingAnswerField(_) => "missing_answer_field",
                QualityError::MixedUnits => "mixed_units",
                QualityError::DuplicateWorker(_) => "duplicate_worker",
            },
            Error::Analytics(_) => "analytics_error",
            Error::Store(e) => match e {
                StoreError::RetriesExhausted(_) | StoreError::Conflict => "retries_exhausted",
                _ => "storage_unavailable",
            },
            Error::NotFound(_) => "not_found",
            Error::Forbidden => "forbidden",
            Error::Unauthenticated => "unauthenticated",
            Error::InvalidCredentials => "invalid_credentials",
            Error::NotDraft(_) => "not_draft",
            Error::AlreadyPublished(_) => "already_published",
            Error::AlreadyHasData(_) => "already_has_data",
            Error::NoData(_) => "no_data",
            Error::UnknownUnit(_) => "unknown_unit",
            Error::InvalidGold(_) => "invalid_gold",
            Error::JobNotOpen(_) => "job_not_open",
            Error::NotEligible => "not_eligible",
            Error::AlreadyReserved => "already_reserved",
            Error::NothingAvailable => "nothing_available",
            Error::ReservationExpired => "reservation_expired",
            Error::NotReserver => "not_reserver",
            Error::AlreadySubmitted => "already_submitted",
            Error::MissingAnswerField { .. } => "missing_answer_field",
            Error::InvalidAnswer { .. } => "invalid_answer",
            Error::UnexpectedUnit(_) => "unexpected_unit",
            Error::DuplicateJudgment(_) => "duplicate_judgment",
            Error::AlreadyCredited => "already_credited",
            Error::UnknownInstance => "unknown_instance",
            Error::NotSubmitted => "not_submitted",
            Error::InsufficientFunds { .. } => "insufficient_funds",
            Error::SoldOut => "sold_out",
            Error::Config(_) => "invalid_config",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
