mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_offsets, random_mesh, random_relabel, random_type};
use redistill::semantics::{find_permutation, weak_equal, BaseOffsetMap};
use redistill::{decompose_primes, DistType, Mesh};

fn sample(seed: u64, sizes: &[u64]) -> (ChaCha8Rng, Mesh, DistType) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = random_mesh(&mut rng, sizes);
    let t = random_type(&mut rng, &mesh);
    (rng, mesh, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn offsets_match_coordinates(seed in any::<u64>()) {
        let (_, mesh, t) = sample(seed, &[1, 2, 3, 4, 6]);
        let beta = BaseOffsetMap::of(&mesh, &t).unwrap();
        for p in 0..mesh.device_count() {
            prop_assert_eq!(beta.at(p), brute_offsets(&mesh, &t, p));
        }
    }

    #[test]
    fn image_is_the_product_of_tile_multiples(seed in any::<u64>()) {
        let (_, mesh, t) = sample(seed, &[1, 2, 3, 4, 6]);
        let image = BaseOffsetMap::of(&mesh, &t).unwrap().image();
        let per_dim: Vec<BTreeSet<u64>> = t.dims.iter().map(|d| (0..d.global).step_by(d.tile as usize).collect()).collect();
        for (i, expected) in per_dim.iter().enumerate() {
            let got: BTreeSet<u64> = image.iter().map(|o| o[i]).collect();
            prop_assert_eq!(&got, expected);
        }
        let expected: usize = per_dim.iter().map(BTreeSet::len).product();
        prop_assert_eq!(image.len(), expected);
    }

    #[test]
    fn injective_iff_every_axis_is_used(seed in any::<u64>()) {
        let (_, mesh, t) = sample(seed, &[1, 2, 3, 4]);
        let beta = BaseOffsetMap::of(&mesh, &t).unwrap();
        let distinct = beta.image().len() == mesh.device_count();
        prop_assert_eq!(beta.is_injective(), distinct);
    }

    #[test]
    fn find_permutation_reindexes_offsets(seed in any::<u64>()) {
        let (mut rng, mesh, t) = sample(seed, &[2, 2, 3, 4]);
        let u = random_relabel(&mut rng, &mesh, &t);
        let pi = find_permutation(&mesh, &t, &u).unwrap();
        let mut seen = vec![false; mesh.device_count()];
        for p in 0..mesh.device_count() {
            prop_assert!(!std::mem::replace(&mut seen[pi.apply(p)], true));
            prop_assert_eq!(brute_offsets(&mesh, &u, p), brute_offsets(&mesh, &t, pi.apply(p)));
        }
    }

    #[test]
    fn weak_equality_is_equality_of_images(seed in any::<u64>(), other in any::<u64>()) {
        let (mut rng, mesh, t) = sample(seed, &[2, 3, 4]);
        let u = if other % 2 == 0 {
            random_relabel(&mut rng, &mesh, &t)
        } else {
            let mut u = random_type(&mut rng, &mesh);
            // Keep globals comparable often enough to exercise both outcomes.
            if u.rank() == t.rank() && other % 4 == 1 {
                let g = t.globaltype();
                for (d, g) in u.dims.iter_mut().zip(g) {
                    if g % (d.global / d.tile) == 0 {
                        d.tile = g / (d.global / d.tile);
                        d.global = g;
                    }
                }
            }
            u
        };
        prop_assume!(u.validate(&mesh).is_ok());
        let same_image = t.globaltype() == u.globaltype()
            && BaseOffsetMap::of(&mesh, &t).unwrap().image() == BaseOffsetMap::of(&mesh, &u).unwrap().image();
        prop_assert_eq!(weak_equal(&t, &u), same_image);
    }

    #[test]
    fn prime_decomposition_preserves_offsets(seed in any::<u64>()) {
        let (_, mesh, t) = sample(seed, &[2, 3, 4, 6, 8]);
        let d = decompose_primes(&mesh, &t, &t).unwrap();
        prop_assert!(d.mesh.is_prime());
        prop_assert_eq!(d.mesh.device_count(), mesh.device_count());
        prop_assert_eq!(d.splits.merge_type(&d.source), t.clone());
        for p in 0..mesh.device_count() {
            prop_assert_eq!(brute_offsets(&d.mesh, &d.source, p), brute_offsets(&mesh, &t, p));
        }
    }

    #[test]
    fn printed_forms_parse_back(seed in any::<u64>()) {
        let (_, mesh, t) = sample(seed, &[1, 2, 3, 4, 6]);
        prop_assert_eq!(mesh.to_string().parse::<Mesh>().unwrap(), mesh);
        prop_assert_eq!(t.to_string().parse::<DistType>().unwrap(), t);
    }
}
