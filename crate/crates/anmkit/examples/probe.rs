use anmkit::causal::*;
use anmkit::anm::AnmConfig;
use anmkit::datagen::*;
use anmkit::regress::Ridge;
use anmkit::sample::SampleSet;

fn cfg(seed: u64) -> LocalizeConfig {
    let reg: f64 = std::env::var("PROBE_REG").unwrap().parse().unwrap();
    LocalizeConfig {
        anm: AnmConfig { ridge: Ridge::Fixed(1.0), n_permutations: 199, density_m: 256, ..AnmConfig::default() },
        grid_m: 512,
        bootstrap_resamples: 60,
        deconv_reg: reg,
        seed,
        ..LocalizeConfig::default()
    }
}

fn effects_only(spec: &GeneratorSpec) -> SampleSet {
    SampleSet::new(generate(spec).unwrap().ys().to_vec()).unwrap()
}

fn run(label: &str, base: GeneratorSpec, mk_new: impl Fn(u64) -> GeneratorSpec) {
    println!("== {label}");
    for seed in 0..5u64 {
        let mut b = base.clone();
        b.seed = base.seed + seed;
        let train = generate(&b).unwrap();
        let new_effects = effects_only(&mk_new(seed));
        match localize_probe(&train, &new_effects, &cfg(seed)) {
            Ok((sc, tc, sm, tm)) => {
                let cv = sc <= tc; let mv = sm <= tm;
                println!("  seed {seed}: cause {sc:.4} vs {tc:.4} ({cv}) | mech {sm:.4} vs {tm:.4} ({mv})");
            }
            Err(e) => println!("  seed {seed}: ERR {e}"),
        }
    }
}

fn main() {
    let base_cause = GeneratorSpec {
        mechanism: Mechanism::Identity,
        cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
        noise: NoiseDist::Gaussian { sd: 1.0 },
        n: 800, seed: 300,
    };
    run("cause narrows (want CauseChanged: cause valid, mech invalid)", base_cause.clone(),
        |s| GeneratorSpec { cause: CauseDist::Uniform { a: -1.5, b: 1.5 }, seed: 900 + s, ..base_cause.clone() });

    let base_noise = GeneratorSpec {
        mechanism: Mechanism::Identity,
        cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
        noise: NoiseDist::Gaussian { sd: std::f64::consts::SQRT_2 },
        n: 800, seed: 400,
    };
    run("noise narrows (want MechanismChanged: cause invalid, mech valid)", base_noise.clone(),
        |s| GeneratorSpec { noise: NoiseDist::Gaussian { sd: 1.0 }, seed: 800 + s, ..base_noise.clone() });

    let base_amb = GeneratorSpec {
        mechanism: Mechanism::Identity,
        cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
        noise: NoiseDist::Gaussian { sd: 1.0 },
        n: 800, seed: 500,
    };
    run("noise widens (want Ambiguous: both valid)", base_amb.clone(),
        |s| GeneratorSpec { noise: NoiseDist::Gaussian { sd: std::f64::consts::SQRT_2 }, seed: 700 + s, ..base_amb.clone() });

    let base_null = base_amb.clone();
    run("no change (want both valid)", base_null.clone(),
        |s| GeneratorSpec { seed: 600 + s, ..base_null.clone() });
}
