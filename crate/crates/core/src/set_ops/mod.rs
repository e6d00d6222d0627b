//! Attention-based set operators: attention, multihead, MAB/SAB, the induced
//! encoder, static pooling, the PICASO cascade and its generalized form, and
//! mean/max pooling.

pub mod blocks;
pub mod eval;
pub mod params;
pub mod records;

pub use blocks::{
    ae_block, attention, cascade, generalized_picaso_block, mab, multihead, picaso_block, pma, pool_max, pool_mean,
    rff, sab, Cascade, GeneralizedCascade,
};
pub use params::{init_params, xavier_bound, MabParams, Templates};
pub use records::{read_attention_csv, write_attention_csv, AttentionRecord, ATTENTION_CSV_HEADER};

#[cfg(test)]
mod tests;
