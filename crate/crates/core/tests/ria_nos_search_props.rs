use fusesim::nos::{collapse, project, scaffold_forward, AdapterMatrix, ScaffoldedLayer};
use fusesim::oracle::Tensor3;
use fusesim::ria::{classify, parse_recurrences, Condition};
use fusesim::search::{evolve, latency_of, EAConfig, Fitness, Genome, SyntheticEstimator};
use fusesim::{golden, ArrayConfig, LayerDescriptor, LayerKind, NetworkTopology};
use proptest::prelude::*;

const INDICES: [&str; 3] = ["i", "j", "k"];

/// One relation per variable: (rhs (variable, offsets) terms, use `*` between terms).
type System = Vec<(Vec<(usize, Vec<i64>)>, Vec<bool>)>;

fn index_text(dim: usize, off: i64) -> String {
    match off {
        0 => INDICES[dim].to_string(),
        o if o > 0 => format!("{}+{o}", INDICES[dim]),
        o => format!("{}{o}", INDICES[dim]),
    }
}

/// Relations are written one per line after the declarations.
fn relation_lines(system: &System, arity: usize, nonlinear: Option<(usize, usize, usize)>) -> Vec<String> {
    let lhs = |v: usize| format!("V{v}[{}]", INDICES[..arity].join(","));
    system
        .iter()
        .enumerate()
        .map(|(v, (terms, muls))| {
            let mut line = format!("{} = ", lhs(v));
            for (t, (var, offs)) in terms.iter().enumerate() {
                if t > 0 {
                    line.push_str(if muls[t - 1] { " * " } else { " + " });
                }
                let idx: Vec<String> = offs
                    .iter()
                    .enumerate()
                    .map(|(d, &o)| match nonlinear {
                        Some((rv, rt, rd)) if (rv, rt, rd) == (v, t, d) => format!("floor({}/2)", INDICES[d]),
                        _ => index_text(d, o),
                    })
                    .collect();
                line.push_str(&format!("V{var}[{}]", idx.join(",")));
            }
            line
        })
        .collect()
}

fn source(vars: usize, arity: usize, lines: &[String]) -> String {
    let mut text: String = (0..vars).map(|v| format!("var V{v}[{arity}]\n")).collect();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    text
}

fn system() -> impl Strategy<Value = (usize, System)> {
    (1..=4usize, 1..=3usize).prop_flat_map(|(vars, arity)| {
        let relation = (prop::sample::subsequence((0..vars).collect::<Vec<_>>(), 1..=vars.min(3)), any::<u64>())
            .prop_map(move |(refs, seed)| {
                let mut bits = seed;
                let mut next = |m: u64| {
                    let v = bits % m;
                    bits = (bits / m) ^ bits.rotate_left(17);
                    v
                };
                let terms: Vec<(usize, Vec<i64>)> = refs
                    .into_iter()
                    .map(|var| (var, (0..arity).map(|_| next(5) as i64 - 2).collect()))
                    .collect();
                let muls = (1..terms.len()).map(|_| next(2) == 1).collect();
                (terms, muls)
            });
        (Just(arity), prop::collection::vec(relation, vars))
    })
    .prop_map(|(arity, mut sys)| {
        // A relation may not read the point it writes.
        for (v, (terms, _)) in sys.iter_mut().enumerate() {
            for (var, offs) in terms.iter_mut() {
                if *var == v && offs.iter().all(|&o| o == 0) {
                    offs[0] = -1;
                }
            }
        }
        (arity, sys)
    })
}

proptest! {
    #[test]
    fn constant_offset_systems_are_ria((arity, sys) in system()) {
        let text = source(sys.len(), arity, &relation_lines(&sys, arity, None));
        let verdict = classify(&parse_recurrences(&text).unwrap());
        prop_assert!(verdict.is_ria, "{text}\n{verdict:?}");
        prop_assert!(verdict.witnesses.is_empty());
    }

    #[test]
    fn one_nonlinear_index_gives_one_witness((arity, sys) in system(), pick in any::<prop::sample::Index>(), dim in any::<prop::sample::Index>()) {
        let sites: Vec<(usize, usize)> = sys.iter().enumerate().flat_map(|(v, (terms, _))| (0..terms.len()).map(move |t| (v, t))).collect();
        let (v, t) = sites[pick.index(sites.len())];
        let d = dim.index(arity);
        let text = source(sys.len(), arity, &relation_lines(&sys, arity, Some((v, t, d))));
        let verdict = classify(&parse_recurrences(&text).unwrap());
        prop_assert!(verdict.indexed && verdict.single_assignment);
        prop_assert!(!verdict.constant_offsets && !verdict.is_ria);
        prop_assert_eq!(verdict.witnesses.len(), 1, "{}", text);
        prop_assert_eq!(verdict.witnesses[0].condition, Condition::ConstantOffset);
        prop_assert_eq!(verdict.witnesses[0].dimension, Some(d));
    }

    #[test]
    fn verdict_ignores_relation_order(
        (arity, sys) in system(),
        nonlinear in any::<bool>(),
        perm in any::<prop::sample::Index>(),
    ) {
        let lines = relation_lines(&sys, arity, nonlinear.then_some((0, 0, 0)));
        let mut shuffled = lines.clone();
        shuffled.rotate_left(perm.index(lines.len()));
        shuffled.reverse();
        let a = classify(&parse_recurrences(&source(sys.len(), arity, &lines)).unwrap());
        let b = classify(&parse_recurrences(&source(sys.len(), arity, &shuffled)).unwrap());
        prop_assert_eq!(a, b);
    }
}

fn kernel(c: usize, k: usize, seed: u64) -> Tensor3<f64> {
    Tensor3::from_fn(c, k, k, |a, b, d| ((seed as usize * 31 + a * 17 + b * 5 + d * 3) % 23) as f64 / 7.0 - 1.5)
}

fn adapter(k: usize, seed: u64) -> AdapterMatrix {
    AdapterMatrix::new(k, (0..k * k).map(|i| ((seed as usize * 13 + i * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn projection_is_linear(
        c in 2..=6usize, k in prop::sample::select(vec![3usize, 5, 7]),
        s1 in 0..1000u64, s2 in 0..1000u64, alpha in -3.0..3.0f64,
    ) {
        let (t1, t2, a) = (kernel(c, k, s1), kernel(c, k, s2), adapter(k, s1 ^ s2));
        let p = |t: Tensor3<f64>, a: AdapterMatrix| project(&ScaffoldedLayer::half(t, a).unwrap()).unwrap();
        let (r1, c1) = p(t1.clone(), a.clone());
        let (r2, c2) = p(t2.clone(), a.clone());
        let sum = Tensor3::from_fn(c, k, k, |x, y, z| t1.get(x, y, z) + t2.get(x, y, z));
        let (rs, cs) = p(sum, a.clone());
        let (ra, ca) = p(t1, a.scaled(alpha));
        for (m, m1, m2, ma) in [(&rs, &r1, &r2, &ra), (&cs, &c1, &c2, &ca)] {
            for i in 0..m.data.len() {
                prop_assert!(close(m.data[i], m1.data[i] + m2.data[i]));
                prop_assert!(close(ma.data[i], alpha * m1.data[i]));
            }
        }
    }

    #[test]
    fn collapsed_forward_matches_scaffold(
        c in 2..=6usize, k in prop::sample::select(vec![3usize, 5]), seed in 0..1000u64,
        extra_h in 0..=4usize, extra_w in 0..=4usize, stride in 1..=2usize, pad in 0..=2usize,
    ) {
        let layer = ScaffoldedLayer::half(kernel(c, k, seed), adapter(k, seed)).unwrap();
        prop_assert_eq!(layer.trainable_params(), c * k * k + k * k);
        let input = Tensor3::from_fn(c, k + extra_h, k + extra_w, |a, b, d| ((a + 2 * b + 3 * d) % 7) as f64 - 3.0);
        let pad = pad.min(k / 2);
        let a = collapse(&layer).unwrap().forward(&input, stride, pad).unwrap();
        let b = scaffold_forward(&layer, &input, stride, pad).unwrap();
        prop_assert_eq!(a.dims(), b.dims());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!(close(*x, *y), "{x} vs {y}");
        }
    }
}

fn mobilenet_v2() -> NetworkTopology {
    golden::builtin("mobilenet_v2").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adding_fuse_layers_never_adds_latency(bits in prop::collection::vec(any::<bool>(), 17), flip in 0..17usize) {
        let net = mobilenet_v2();
        let cfg = ArrayConfig::default();
        let mut without = Genome { bits };
        without.bits[flip] = false;
        let mut with = without.clone();
        with.bits[flip] = true;
        let (a, b) = (latency_of(&with, &net, &cfg).unwrap(), latency_of(&without, &net, &cfg).unwrap());
        prop_assert!(a <= b, "{a} > {b}");
    }
}

fn small_net() -> NetworkTopology {
    let mut layers = vec![LayerDescriptor::new("stem", LayerKind::Standard, 32, 32, 3, 3, 8, 1, 1)];
    let mut c = 8;
    for b in 0..6u64 {
        let h = if b < 3 { 32 } else { 16 };
        let stride = if b == 2 { 2 } else { 1 };
        let dw = LayerDescriptor::new(format!("dw{b}"), LayerKind::Depthwise, h, h, 3 + 2 * (b % 2), c, c, stride, 1 + b % 2);
        let out = dw.out_h();
        layers.push(dw);
        layers.push(LayerDescriptor::new(format!("pw{b}"), LayerKind::Pointwise, out, out, 1, c, c + 4, 1, 0));
        c += 4;
    }
    NetworkTopology::new("small", layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_is_seeded_and_pareto_valid(seed in any::<u64>(), lambda in 0.0..2000.0f64) {
        let net = small_net();
        let cfg = ArrayConfig::default();
        let ea = EAConfig { population: 16, iterations: 8, offspring: 8, seed, latency_weight: lambda, ..EAConfig::default() };
        let est = SyntheticEstimator { base: 0.75, penalty: 0.002 };
        let a = evolve(&net, &cfg, &ea, &est).unwrap();
        let b = evolve(&net, &cfg, &ea, &est).unwrap();
        prop_assert_eq!(&a.pareto, &b.pareto);
        prop_assert_eq!(&a.first_seen, &b.first_seen);

        let fitness = |g: &Genome| {
            let latency_s = latency_of(g, &net, &cfg).unwrap();
            let accuracy = est.base - est.penalty * g.popcount() as f64;
            Fitness { latency_s, accuracy, score: accuracy - lambda * latency_s }
        };
        for p in &a.pareto {
            prop_assert!(a.first_seen.contains_key(&p.genome));
            for g in a.first_seen.keys() {
                prop_assert!(!fitness(g).dominates(&p.fitness), "{g} dominates {}", p.genome);
            }
        }
    }
}
