// SPDX-License-Identifier: Apache-2.0

use patgen_core::deepsquish::{fold, unfold};
use patgen_core::geometry::{decode_squish, encode_squish, pad_to_square, same_coverage, SquishPattern};
use patgen_core::rng::seeded;
use patgen_core::toy::random_layout;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encode_pad_fold_decode_preserves_coverage(seed in any::<u64>(), polys in 1usize..8) {
        let layout = random_layout(&mut seeded(seed), 1024, polys);
        let sq = encode_squish(&layout).unwrap();
        let back = decode_squish(&sq).unwrap();
        prop_assert!(same_coverage(&layout, &back));

        let padded = pad_to_square(&sq, 36).unwrap();
        let t = fold(&padded.topology, 9).unwrap();
        let restored = SquishPattern::new(unfold(&t), padded.dx.clone(), padded.dy.clone(), 1.0).unwrap();
        prop_assert!(same_coverage(&layout, &decode_squish(&restored).unwrap()));
    }

    #[test]
    fn reencoding_a_decoded_layout_is_canonical(seed in any::<u64>()) {
        let layout = random_layout(&mut seeded(seed), 512, 5);
        let sq = encode_squish(&layout).unwrap();
        let again = encode_squish(&decode_squish(&sq).unwrap()).unwrap();
        prop_assert_eq!(sq.topology, again.topology);
        prop_assert_eq!(sq.dx, again.dx);
        prop_assert_eq!(sq.dy, again.dy);
    }
}
