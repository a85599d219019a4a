//! Randomized invariants checked against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use simnet_core::decision::{inferential_loss, meu_diagnosis, value_of_clairvoyance, voc_shortcircuit, UtilityMatrix};
use simnet_core::inference::{Differential, Engine, InferenceError};
use simnet_core::model::{d_separated, joint_from_map, reverse_arc, Evidence, JointDistribution, Variable};
use simnet_core::multihyp::{noisy_or, noisy_or_causal, NoisyOrSpec};
use simnet_core::partitions::{expand_assessments, HypothesisSet, Partition};
use simnet_core::similarity::{construct_global, derive_ordinary};
use simnet_core::synth::{self, SyntheticModel};

const TOL: f64 = 1e-9;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

/// Largest violation of `p(a, b | z) = p(a | z) p(b | z)` over every
/// instance of `z`.
fn independence_gap(joint: &JointDistribution, a: usize, b: usize, z: &[usize]) -> f64 {
    let mut vars = z.to_vec();
    vars.extend([a, b]);
    let (ca, cb) = (joint.variables[a].cardinality(), joint.variables[b].cardinality());
    let mut worst: f64 = 0.0;
    for block in joint.marginal(&vars).chunks(ca * cb) {
        let pz: f64 = block.iter().sum();
        for i in 0..ca {
            for j in 0..cb {
                let pa: f64 = block[i * cb..(i + 1) * cb].iter().sum();
                let pb: f64 = (0..ca).map(|ii| block[ii * cb + j]).sum();
                worst = worst.max((block[i * cb + j] * pz - pa * pb).abs());
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn joint_of_random_map_sums_to_one(seed in any::<u64>()) {
        let akm = synth::random_assessed_map(&mut synth::rng(seed), 1 << 12);
        let joint = joint_from_map(&akm).unwrap();
        prop_assert!((joint.total() - 1.0).abs() < TOL);
    }

    #[test]
    fn posterior_matches_joint_conditioning(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let akm = synth::random_assessed_map(&mut r, 1 << 12);
        let ev = synth::random_evidence(&mut r, &akm);
        let joint = joint_from_map(&akm).unwrap();
        let pairs = ev.resolve(&akm.map.variables).unwrap();
        match (Engine::new(&akm).unwrap().posterior(&ev), joint.conditional(0, &pairs)) {
            (Ok(post), Ok(oracle)) => {
                for (p, q) in post.probabilities.iter().zip(&oracle) {
                    prop_assert!((p - q).abs() < TOL, "{:?} vs {:?}", post.probabilities, oracle);
                }
            }
            (Err(InferenceError::ImpossibleEvidence), Err(_)) => {}
            (a, b) => prop_assert!(false, "engine {:?}, oracle {:?}", a, b),
        }
    }

    #[test]
    fn observation_order_does_not_change_the_posterior(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let akm = synth::random_assessed_map(&mut r, 1 << 12);
        let ev = synth::random_evidence(&mut r, &akm);
        let mut pairs: Vec<(String, String)> =
            ev.iter().map(|o| (o.feature.clone(), o.instance.clone())).collect();
        pairs.shuffle(&mut r);
        let shuffled = Evidence::from_pairs(&pairs).unwrap();
        let engine = Engine::new(&akm).unwrap();
        match (engine.posterior(&ev), engine.posterior(&shuffled)) {
            (Ok(a), Ok(b)) => {
                for (p, q) in a.probabilities.iter().zip(&b.probabilities) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn preposterior_averages_back_to_the_posterior(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let akm = synth::random_assessed_map(&mut r, 1 << 12);
        let ev = synth::random_evidence(&mut r, &akm);
        let engine = Engine::new(&akm).unwrap();
        let Ok(current) = engine.posterior(&ev) else { return Ok(()) };
        for f in akm.map.variables.iter().skip(1).filter(|v| ev.get(&v.name).is_none()) {
            let pre = engine.preposterior(&ev, &f.name).unwrap();
            let total: f64 = pre.iter().map(|(pf, _)| pf).sum();
            prop_assert!((total - 1.0).abs() < TOL);
            for (k, p) in current.probabilities.iter().enumerate() {
                let mixed: f64 = pre.iter().filter_map(|(pf, post)| post.as_ref().map(|q| pf * q[k])).sum();
                prop_assert!((mixed - p).abs() < TOL);
            }
        }
    }

    #[test]
    fn reversing_an_arc_twice_keeps_the_joint(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let mut akm = synth::random_assessed_map(&mut r, 1 << 10);
        // Reversal may give the distinguished node parents.
        akm.map.distinguished = None;
        let arcs: Vec<_> = akm.map.arcs.iter().cloned().collect();
        let Some((a, b)) = arcs.choose(&mut r).cloned() else { return Ok(()) };
        let Ok(once) = reverse_arc(&akm, &a, &b) else { return Ok(()) };
        let twice = reverse_arc(&once, &b, &a).unwrap();
        let (j0, j1, j2) = (joint_from_map(&akm).unwrap(), joint_from_map(&once).unwrap(), joint_from_map(&twice).unwrap());
        for ((p, q), s) in j0.probabilities.iter().zip(&j1.probabilities).zip(&j2.probabilities) {
            prop_assert!((p - q).abs() < TOL && (p - s).abs() < TOL);
        }
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn comprehensive_and_ordinary_globals_agree(seed in any::<u64>(), k in 2usize..=4, n in 1usize..=5) {
        let (_, c) = synth::consistent_comprehensive(&mut synth::rng(seed), k, n);
        let gc = construct_global(&c).unwrap();
        let go = construct_global(&derive_ordinary(&c)).unwrap();
        let component = gc.undirected_component(synth::DISTINGUISHED);
        let arcs: BTreeSet<_> = gc.arcs.iter().filter(|(a, _)| component.contains(a)).cloned().collect();
        let names: BTreeSet<String> = go.variables.iter().map(|v| v.name.clone()).collect();
        prop_assert_eq!(arcs, go.arcs);
        prop_assert_eq!(component, names);
    }

    #[test]
    fn ordinary_global_separations_hold_numerically(seed in any::<u64>(), k in 2usize..=3) {
        let m = SyntheticModel::sample(&mut synth::rng(seed), k, 6 - k);
        let joint = m.parameters.joint(&m.hs, None);
        let km = &m.global.map;
        let names: Vec<&str> = km.variables.iter().map(|v| v.name.as_str()).collect();
        for a in 0..names.len() {
            for b in a + 1..names.len() {
                let rest: Vec<usize> = (0..names.len()).filter(|&v| v != a && v != b).collect();
                for mask in 0u32..(1 << rest.len()) {
                    let z: Vec<usize> = rest.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &v)| v).collect();
                    let zn: Vec<&str> = z.iter().map(|&v| names[v]).collect();
                    if d_separated(km, &[names[a]], &[names[b]], &zn).unwrap() {
                        let idx = |n: &str| joint.index_of(n).unwrap();
                        let zi: Vec<usize> = zn.iter().map(|n| idx(n)).collect();
                        let gap = independence_gap(&joint, idx(names[a]), idx(names[b]), &zi);
                        prop_assert!(gap < TOL, "{} _||_ {} | {:?}: {}", names[a], names[b], zn, gap);
                    }
                }
            }
        }
    }

    #[test]
    fn expanded_rows_are_shared_by_set_mates(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let hyps: Vec<String> = (1..=r.random_range(2..=6)).map(|i| format!("d{i}")).collect();
        let h = Variable::new("h", &hyps);
        let feature = Variable::new("f", &["a", "b", "c"]);
        let parent = Variable::binary("p");
        let mut partitions = Vec::new();
        for inst in &parent.instances {
            let mut shuffled = hyps.clone();
            shuffled.shuffle(&mut r);
            let cut = r.random_range(1..=shuffled.len());
            let groups: Vec<&[String]> = if cut == shuffled.len() { vec![&shuffled] } else { vec![&shuffled[..cut], &shuffled[cut..]] };
            let sets = groups.iter().enumerate().map(|(i, g)| {
                let members: Vec<&str> = g.iter().map(String::as_str).collect();
                HypothesisSet::of(format!("S{i}"), &members)
            }).collect();
            let distributions = groups.iter().map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.01..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|x| x / z).collect()
            }).collect();
            partitions.push(Partition {
                feature: "f".into(),
                conditioning: BTreeMap::from([("p".to_string(), inst.clone())]),
                sets,
                distributions,
            });
        }
        let table = expand_assessments(&partitions, &h, &feature, std::slice::from_ref(&parent), true, TOL).unwrap();
        for (c, p) in partitions.iter().enumerate() {
            for (k, hyp) in hyps.iter().enumerate() {
                let s = p.set_of(hyp).unwrap();
                prop_assert_eq!(&table.rows[k * 2 + c], &p.distributions[s]);
            }
        }
    }

    #[test]
    fn noisy_or_forms_agree_and_are_monotone(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let leak = if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..0.9) };
        let n = r.random_range(1..=6);
        let activations: BTreeMap<String, f64> = (0..n).map(|i| (format!("d{i}"), r.random_range(leak..=1.0))).collect();
        let spec = NoisyOrSpec { finding: "f".into(), leak, activations };
        let mut present: Vec<&str> = spec.activations.keys().map(String::as_str).filter(|_| r.random_bool(0.6)).collect();
        let p = noisy_or(&spec, &present).unwrap();
        let causes: Vec<f64> = present.iter().map(|d| spec.cause_probability(d).unwrap()).collect();
        prop_assert!((p - noisy_or_causal(leak, &causes)).abs() < 1e-12);
        present.shuffle(&mut r);
        prop_assert!((p - noisy_or(&spec, &present).unwrap()).abs() < 1e-12);
        if let Some(extra) = spec.activations.keys().find(|d| !present.contains(&d.as_str())) {
            let mut more = present.clone();
            more.push(extra);
            prop_assert!(noisy_or(&spec, &more).unwrap() >= p - 1e-12);
        }
    }
}

fn random_differential<R: Rng>(r: &mut R, hyps: &[String]) -> Differential {
    let raw: Vec<f64> = hyps.iter().map(|_| r.random_range(0.0..1.0)).collect();
    let z: f64 = raw.iter().sum();
    Differential::new(hyps.to_vec(), raw.iter().map(|x| x / z).collect())
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn inferential_loss_is_nonnegative_and_zero_on_agreement(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let hyps: Vec<String> = (1..=r.random_range(2..=6)).map(|i| format!("d{i}")).collect();
        let u = synth::random_utilities(&mut r, &hyps);
        let (gold, model) = (random_differential(&mut r, &hyps), random_differential(&mut r, &hyps));
        let il = inferential_loss(&gold, &model, &u).unwrap();
        prop_assert!(il.loss >= 0.0);
        prop_assert_eq!(il.loss == 0.0, il.gold_diagnosis == il.model_diagnosis);
        prop_assert_eq!(inferential_loss(&gold, &gold, &u).unwrap().loss, 0.0);
    }

    #[test]
    fn affine_utility_changes_keep_diagnoses(seed in any::<u64>(), scale in 0.1f64..100.0, shift in -1e3f64..1e3) {
        let mut r = synth::rng(seed);
        let hyps: Vec<String> = (1..=r.random_range(2..=6)).map(|i| format!("d{i}")).collect();
        let u = synth::random_utilities(&mut r, &hyps);
        let v = UtilityMatrix::new(
            hyps.clone(),
            u.entries.iter().map(|row| row.iter().map(|x| scale * x + shift).collect()).collect(),
        ).unwrap();
        let (gold, model) = (random_differential(&mut r, &hyps), random_differential(&mut r, &hyps));
        prop_assert_eq!(meu_diagnosis(&model, &u).unwrap().diagnosis, meu_diagnosis(&model, &v).unwrap().diagnosis);
        let (a, b) = (inferential_loss(&gold, &model, &u).unwrap(), inferential_loss(&gold, &model, &v).unwrap());
        prop_assert!((b.loss - scale * a.loss).abs() < 1e-9 * (1.0 + b.loss.abs()));
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn voc_is_nonnegative_and_zero_when_short_circuited(seed in any::<u64>()) {
        let mut r = synth::rng(seed);
        let k = r.random_range(3..=4);
        let m = SyntheticModel::sample(&mut r, k, 4);
        let hyps = m.hs.graph.hypotheses.clone();
        let surviving: BTreeSet<String> = hyps.iter().filter(|_| r.random_bool(0.6)).cloned().collect();
        if surviving.is_empty() {
            return Ok(());
        }
        let raw: Vec<f64> = hyps.iter().map(|h| if surviving.contains(h) { r.random_range(0.1..1.0) } else { 0.0 }).collect();
        let z: f64 = raw.iter().sum();
        let prior: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let akm = m.with_prior(&prior);
        let engine = Engine::new(&akm).unwrap();
        let u = synth::random_utilities(&mut r, &hyps);
        let ev = synth::random_evidence(&mut r, &akm);
        let skip = voc_shortcircuit(&m.ordinary, &surviving);
        let features: Vec<String> = engine.features().map(String::from).collect();
        for f in features.iter().filter(|f| ev.get(f).is_none()) {
            let voc = value_of_clairvoyance(&engine, &ev, f, &u).unwrap();
            prop_assert!(voc >= 0.0);
            if skip.contains(f) {
                prop_assert!(voc < TOL, "{} has VOC {}", f, voc);
            }
        }
    }
}
