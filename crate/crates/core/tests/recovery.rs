use fragmark::codec::{block_mean6, reconstruct_pixel};
use fragmark::experiment::{apply_square_tamper, synthetic_image};
use fragmark::grid::{BlockIndex, TamperRegion};
use fragmark::{authenticate_with_mapping, build_mapping, embed_with_mapping, recover, KeySet, Strategy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Recovered blocks whose mapping block was untouched carry the original
    // 6-bit mean, centered in its bin.
    #[test]
    fn recovered_blocks_restore_the_mean(
        seed in any::<u64>(),
        k in any::<(u64, u64, u64)>(),
        row in 0usize..40,
        col in 0usize..40,
        l in 1usize..24,
    ) {
        let host = synthetic_image(128, 128, seed).unwrap();
        let keys = KeySet::new(k.0, k.1, k.2);
        let grid = host.grid();
        let mapping = build_mapping(Strategy::Deneighborhood { r: 9 }, keys.k3, grid).unwrap();
        let marked = embed_with_mapping(&host, &keys, &mapping).unwrap();
        let region = TamperRegion::new(BlockIndex::new(row, col), l);
        let (tampered, truth) = apply_square_tamper(&marked, region, seed ^ 1).unwrap();
        let report = authenticate_with_mapping(&tampered, &keys, &mapping).unwrap();
        let result = recover(&tampered, &report, &keys, &mapping).unwrap();

        // Every block of the square is flagged unless its bytes happen to
        // pass both checks, which the 8-connected refinement catches.
        let missed = truth.iter().filter(|&&i| !report.final_map.is_tampered(i)).count();
        prop_assert!(missed * 8 <= truth.len().max(8));

        for &i in &result.recovered {
            let j = mapping.forward(i);
            if region.contains(grid.block(j)) {
                continue;
            }
            let original = block_mean6(marked.image.block(grid.block(i)));
            prop_assert_eq!(result.image.block(grid.block(i)), [reconstruct_pixel(original); 4]);
        }
        // Blocks not flagged are left exactly as they were.
        for i in 0..grid.total() {
            if !report.final_map.is_tampered(i) {
                prop_assert_eq!(result.image.block(grid.block(i)), tampered.block(grid.block(i)));
            }
        }
    }
}
