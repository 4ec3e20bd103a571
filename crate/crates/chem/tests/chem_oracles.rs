mod common;

use common::cycles::independent_cycles;
use era_chem::{
    crippen_logp, crippen_mr, evaluate_energy, parse_smiles, ring_count, tanimoto, tokenize_smiles, CrippenTable,
    EnergySpec, Fingerprint, Property,
};
use proptest::prelude::*;

const CORPUS: &str = include_str!("data/ring_corpus.smi");

fn corpus() -> Vec<&'static str> {
    CORPUS.lines().filter(|l| !l.is_empty()).collect()
}

#[test]
fn ring_count_matches_cycle_enumeration() {
    let mols = corpus();
    assert_eq!(mols.len(), 50);
    for s in mols {
        let m = parse_smiles(s).unwrap();
        let edges: Vec<_> = m.bonds().iter().map(|b| (b.a, b.b)).collect();
        assert_eq!(ring_count(&m), independent_cycles(m.num_atoms(), &edges), "{s}");
    }
}

#[test]
fn documented_ring_counts() {
    for (s, n) in [("CCO", 0), ("c1ccccc1", 1), ("c1ccccc1-c2ccccc2", 2), ("C12C3C4C1C5C2C3C45", 5)] {
        assert_eq!(ring_count(&parse_smiles(s).unwrap()), n, "{s}");
    }
}

#[test]
fn tokenizer_round_trips_corpus() {
    for s in corpus() {
        assert_eq!(tokenize_smiles(s).unwrap().concat(), s);
    }
    assert_eq!(tokenize_smiles("[C@@H]1CC1").unwrap(), vec!["[C@@H]", "1", "C", "C", "1"]);
}

#[test]
fn parse_examples() {
    let m = parse_smiles("CCO").unwrap();
    assert_eq!((m.num_atoms(), m.bonds().len()), (3, 2));
    assert!(parse_smiles("C1CC").is_err());
    assert!(parse_smiles("C(C)(C)(C)(C)C").is_err());
}

// Published per-type contributions (logP, MR).
const C1: (f64, f64) = (0.1441, 2.503);
const C3: (f64, f64) = (-0.2035, 2.753);
const C5: (f64, f64) = (-0.2783, 5.007);
const C8: (f64, f64) = (0.08452, 2.464);
const C18: (f64, f64) = (0.1581, 3.35);
const C21: (f64, f64) = (0.136, 3.509);
const C23: (f64, f64) = (0.5437, 3.853);
const H1: (f64, f64) = (0.123, 1.057);
const H2: (f64, f64) = (-0.2677, 1.395);
const H4: (f64, f64) = (0.298, 1.805);
const O2: (f64, f64) = (-0.2893, 0.8238);
const O9: (f64, f64) = (-0.1526, 0.0);

fn table_sum(terms: &[(usize, (f64, f64))]) -> (f64, f64) {
    terms.iter().fold((0.0, 0.0), |acc, &(n, (lp, mr))| (acc.0 + n as f64 * lp, acc.1 + n as f64 * mr))
}

#[test]
fn crippen_matches_hand_sums() {
    let cases: [(&str, Vec<(usize, (f64, f64))>); 6] = [
        ("C", vec![(1, C1), (4, H1)]),
        ("CCO", vec![(1, C1), (1, C3), (1, O2), (5, H1), (1, H2)]),
        ("c1ccccc1", vec![(6, C18), (6, H1)]),
        ("Cc1ccccc1", vec![(1, C8), (1, C21), (5, C18), (8, H1)]),
        ("Oc1ccccc1", vec![(1, O2), (1, C23), (5, C18), (5, H1), (1, H2)]),
        ("CC(=O)O", vec![(1, C1), (1, C5), (1, O9), (1, O2), (3, H1), (1, H4)]),
    ];
    for (s, terms) in cases {
        let m = parse_smiles(s).unwrap();
        let (lp, mr) = table_sum(&terms);
        assert!((crippen_logp(&m).unwrap() - lp).abs() <= 1e-6, "{s} logp");
        assert!((crippen_mr(&m).unwrap() - mr).abs() <= 1e-6, "{s} mr");
    }
    // the methane carbon gets the C1 class on its own
    let t = CrippenTable::builtin();
    let types = t.classify(&parse_smiles("C").unwrap()).unwrap();
    assert_eq!(t.rules()[types[0]].atom_type, "C1");
    assert_eq!(t.rules()[types[0]].logp, C1.0);
}

#[test]
fn crippen_is_additive_over_components() {
    for (a, b) in [("CCO", "c1ccccc1"), ("CC(=O)O", "[Na+]"), ("C1CC1", "ClCCl")] {
        let joined = parse_smiles(&format!("{a}.{b}")).unwrap();
        let (ma, mb) = (parse_smiles(a).unwrap(), parse_smiles(b).unwrap());
        let sum = crippen_logp(&ma).unwrap() + crippen_logp(&mb).unwrap();
        assert!((crippen_logp(&joined).unwrap() - sum).abs() < 1e-12);
    }
}

#[test]
fn invalid_sequence_energies() {
    let garbage = "C1CC(";
    let tan = EnergySpec::neglog(Property::Tanimoto);
    assert_eq!(evaluate_energy(&tan, garbage, Some("CCO")).unwrap(), 10.0);
    assert_eq!(evaluate_energy(&EnergySpec::neglog(Property::Qed), garbage, None).unwrap(), 4.5);
    assert_eq!(evaluate_energy(&EnergySpec::harmonic(Property::Logp, 2.5, 1.0), garbage, None).unwrap(), 300.0);
    assert_eq!(evaluate_energy(&EnergySpec::harmonic(Property::Mr, 2.5, 1.0), garbage, None).unwrap(), 400.0);
    assert_eq!(evaluate_energy(&EnergySpec::harmonic(Property::RingCount, 2.0, 1.0), garbage, None).unwrap(), 70.0);
}

#[test]
fn harmonic_logp_example() {
    // find f from the molecule, then shift mu so that f - mu = 5
    let m = parse_smiles("CCCCCCCCCCCCCCC").unwrap();
    let f = crippen_logp(&m).unwrap();
    let spec = EnergySpec::harmonic(Property::Logp, f - 5.0, 1.0);
    let u = evaluate_energy(&spec, "CCCCCCCCCCCCCCC", None).unwrap();
    assert!((u - 12.5).abs() < 1e-12);
}

#[test]
fn fingerprint_ignores_atom_order() {
    let reference = Fingerprint::of(&parse_smiles("c1ccccc1O").unwrap());
    let groups = [
        ["CC(=O)Oc1ccccc1C(=O)O", "OC(=O)c1ccccc1OC(C)=O", "c1cccc(C(=O)O)c1OC(=O)C"],
        ["Oc1ccc(Cl)cc1", "Clc1ccc(O)cc1", "c1cc(O)ccc1Cl"],
        ["CCN(CC)CC", "N(CC)(CC)CC", "C(C)N(CC)CC"],
    ];
    for g in groups {
        let sims: Vec<f64> =
            g.iter().map(|s| tanimoto(&Fingerprint::of(&parse_smiles(s).unwrap()), &reference).unwrap()).collect();
        assert!(sims.windows(2).all(|w| w[0] == w[1]), "{g:?}: {sims:?}");
    }
}

fn smiles_like() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            Just("C"), Just("c"), Just("N"), Just("n"), Just("O"), Just("o"), Just("S"), Just("Cl"), Just("Br"),
            Just("F"), Just("("), Just(")"), Just("="), Just("#"), Just("1"), Just("2"), Just("%10"), Just("[NH4+]"),
            Just("[O-]"), Just("[nH]"), Just("."), Just("x"), Just("["), Just("]"),
        ],
        0..24,
    )
    .prop_map(|parts| parts.concat())
}

fn fingerprint() -> impl Strategy<Value = Fingerprint> {
    proptest::collection::btree_set(0usize..128, 0..40).prop_map(|bits| Fingerprint::from_bits(128, bits).unwrap())
}

proptest! {
    #[test]
    fn tokens_concatenate_to_input(s in smiles_like()) {
        if let Ok(tokens) = tokenize_smiles(&s) {
            prop_assert_eq!(tokens.concat(), s);
        }
    }

    #[test]
    fn energies_are_total(s in smiles_like(), arbitrary in ".{0,20}") {
        let specs = [
            EnergySpec::harmonic(Property::RingCount, 2.0, 1.0),
            EnergySpec::harmonic(Property::Logp, 1.0, 0.5),
            EnergySpec::neglog(Property::Qed),
            EnergySpec::composite([(1.0, EnergySpec::harmonic(Property::Mr, 30.0, 5.0)), (2.0, EnergySpec::neglog(Property::Tanimoto))]),
            EnergySpec::prompted(5.0, 10.0, EnergySpec::harmonic(Property::Logp, 5.0, 1.0)),
        ];
        for spec in &specs {
            for g in [&s, &arbitrary] {
                let u = evaluate_energy(spec, g, Some("CCO")).unwrap();
                prop_assert!(u.is_finite());
            }
        }
    }

    #[test]
    fn single_unit_composite_is_the_component(s in smiles_like()) {
        for inner in [EnergySpec::harmonic(Property::RingCount, 1.0, 1.0), EnergySpec::neglog(Property::Tanimoto)] {
            let a = evaluate_energy(&inner, &s, Some("c1ccccc1")).unwrap();
            let b = evaluate_energy(&EnergySpec::composite([(1.0, inner.clone())]), &s, Some("c1ccccc1")).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn tanimoto_is_a_similarity(a in fingerprint(), b in fingerprint()) {
        let ab = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ring_count_agrees_on_random_valid_strings(s in smiles_like()) {
        if let Ok(m) = parse_smiles(&s) {
            let edges: Vec<_> = m.bonds().iter().map(|b| (b.a, b.b)).collect();
            prop_assert_eq!(ring_count(&m), independent_cycles(m.num_atoms(), &edges));
        }
    }
}
