//! Self-embedding fragile watermarking for 8-bit grayscale images.
//!
//! The image is cut into 2×2 blocks. Each block carries, in its two least
//! significant bit planes, a 2-bit authentication code of its own and the
//! 6-bit encrypted mean of another block, its *mapping block* chosen by a
//! keyed permutation. When a region is overwritten, blocks that fail
//! authentication are rebuilt from the recovery data stored in their mapping
//! blocks, provided those survived.
//!
//! The de-neighborhood mapping keeps every mapping block outside an `r × r`
//! window around its source, so a tampered block and the block holding its
//! recovery data are unlikely to be destroyed together.
//!
//! ```
//! use fragmark::{authenticate, embed, recover, GrayImage, KeySet, Strategy};
//!
//! let host = GrayImage::from_fn(64, 64, |x, y| (x * 3 + y * 2) as u8).unwrap();
//! let keys = KeySet::new(11, 22, 33);
//! let strategy = Strategy::Deneighborhood { r: 9 };
//! let marked = embed(&host, &keys, strategy).unwrap();
//!
//! let mut attacked = marked.image.clone();
//! for y in 10..14 {
//!     for x in 20..24 {
//!         attacked.set(x, y, 255);
//!     }
//! }
//! let report = authenticate(&attacked, &keys, strategy).unwrap();
//! assert!(!report.is_authentic());
//! let mapping = fragmark::build_mapping(strategy, keys.k3, host.grid()).unwrap();
//! let restored = recover(&attacked, &report, &keys, &mapping).unwrap();
//! // A 2x2-block edit fits inside every 9x9 window around it.
//! assert!(restored.unrecoverable.is_empty());
//! ```

pub mod analysis;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod image;
pub mod mapping;
pub mod protocol;
pub mod rng;

pub use analysis::{average_recovery_rate, block_recovery_rate_exact, RecoveryProfile, TheoryParams};
pub use codec::KeySet;
pub use error::{Error, Result};
pub use experiment::{psnr, run_plan, ExperimentPlan, ExperimentReport, ImageSource, TamperMode};
pub use grid::{BlockGrid, BlockIndex, TamperRegion};
pub use image::GrayImage;
pub use mapping::{build_mapping, verify_mapping, BlockMapping, Strategy};
pub use protocol::{
    authenticate, authenticate_with_mapping, embed, embed_with_mapping, recover, recover_with_policy,
    AuthCase, AuthenticationReport, RecoveryResult, SourcePolicy, TamperMap, WatermarkedImage,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/blocks.md")]
    struct Blocks;
    #[doc = include_str!("../../../book/src/codec.md")]
    struct Codec;
    #[doc = include_str!("../../../book/src/mapping.md")]
    struct Mapping;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/theory.md")]
    struct Theory;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
