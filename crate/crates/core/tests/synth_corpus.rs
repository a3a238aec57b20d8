use fairgap::corpus::split;
use fairgap::metrics::{bias_report, ReportOptions};
use fairgap::model::{adjust_gender_weights, fit, GenderSelection};
use fairgap::perturb::detect_gender;
use fairgap::synth::{generate, SynthConfig, FEMALE_PROXY, MALE_PROXY};
use fairgap::{GapKind, Gender, GenderLexicon, TrainConfig};

fn within_3_sigma(hits: usize, n: usize, p: f64) -> bool {
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - n as f64 * p).abs() <= 3.0 * sigma
}

#[test]
fn frequencies_match_config() {
    let cfg = SynthConfig {
        num_classes: 3,
        docs_per_class: 600,
        gender_skew: vec![0.3, 0.5, 0.9],
        explicit_rate: 0.6,
        proxy_strength: 0.4,
        seed: 21,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let lex = GenderLexicon::default();
    for (y, p) in cfg.gender_skew.iter().enumerate() {
        let docs: Vec<_> = ds.documents().iter().filter(|d| d.label == y).collect();
        assert_eq!(docs.len(), 600);
        let female = docs.iter().filter(|d| d.gender == Gender::Female).count();
        assert!(within_3_sigma(female, docs.len(), *p), "class {y}: {female}");
    }
    let explicit = ds.documents().iter().filter(|d| detect_gender(&d.text, &lex).total() > 0).count();
    assert!(within_3_sigma(explicit, ds.len(), cfg.explicit_rate));
    let proxied = ds
        .documents()
        .iter()
        .filter(|d| d.text.contains(FEMALE_PROXY) || d.text.contains(MALE_PROXY))
        .count();
    assert!(within_3_sigma(proxied, ds.len(), cfg.proxy_strength));
}

#[test]
fn proxies_follow_the_true_gender() {
    let ds = generate(&SynthConfig { docs_per_class: 200, proxy_strength: 1.0, ..SynthConfig::default() }).unwrap();
    for d in ds.documents() {
        let want = if d.gender == Gender::Female { FEMALE_PROXY } else { MALE_PROXY };
        assert!(d.text.contains(want), "{}", d.text);
    }
}

fn rms_pair(cfg: &SynthConfig, w: Option<f64>) -> (f64, f64) {
    let lex = GenderLexicon::default();
    let corpus = generate(cfg).unwrap();
    let (train, _, test) = split(&corpus, (0.6, 0.1, 0.3), cfg.seed).unwrap();
    let mut model = fit(&train, &TrainConfig::default()).unwrap();
    if let Some(w) = w {
        model = adjust_gender_weights(&model, w, GenderSelection::Both, &lex);
    }
    let r = bias_report(&model, &test, &lex, &ReportOptions::default()).unwrap();
    (r.rms_of(GapKind::SgTpr).unwrap(), r.rms_of(GapKind::CgTpr).unwrap())
}

#[test]
fn no_bias_source_means_small_gaps() {
    let cfg = SynthConfig { proxy_strength: 0.0, gender_skew: vec![0.5, 0.5], seed: 2, ..SynthConfig::default() };
    let (sg, cg) = rms_pair(&cfg, None);
    assert!(sg < 0.05 && cg < 0.05, "sg {sg} cg {cg}");
}

#[test]
fn without_proxy_the_blind_model_has_no_statistical_gap() {
    let base = SynthConfig { proxy_strength: 0.0, docs_per_class: 4000, seed: 3, ..SynthConfig::default() };
    let (sg, cg) = rms_pair(&base, Some(0.0));
    assert_eq!(cg, 0.0);
    assert!(sg < 0.05, "sg {sg}");
    let (sg_proxy, _) = rms_pair(&SynthConfig { proxy_strength: 0.9, ..base }, Some(0.0));
    assert!(sg_proxy > sg, "proxy {sg_proxy} vs none {sg}");
}

#[test]
fn statistical_and_causal_gaps_can_disagree_in_sign() {
    let lex = GenderLexicon::default();
    let cfg = SynthConfig { seed: 4, ..SynthConfig::default() };
    let corpus = generate(&cfg).unwrap();
    let (train, _, test) = split(&corpus, (0.6, 0.1, 0.3), cfg.seed).unwrap();
    let model = fit(&train, &TrainConfig::default()).unwrap();
    // With small indicator weights the proxy still drives SG while CG follows the lexicon.
    let disagree = [0.005, 0.01, 0.02, -0.005, -0.01, -0.02].iter().any(|w| {
        let scaled = adjust_gender_weights(&model, *w, GenderSelection::Both, &lex);
        let r = bias_report(&scaled, &test, &lex, &ReportOptions::default()).unwrap();
        r.sg_tpr.iter().zip(&r.cg_tpr).any(|(s, c)| s.value.unwrap() * c.value.unwrap() < 0.0)
    });
    assert!(disagree);
}
