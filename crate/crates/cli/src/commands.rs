use std::path::{Path, PathBuf};

use deus_core::checkpoint::{write_atomic, ModelConfig, TensorArchive};
use deus_core::sinkhorn::EpsilonMode;
use deus_core::tmf::FusionReport;
use deus_core::toy_llama::{perplexity_from_logits, random_model, random_tokens, ForwardError};
use deus_core::upscale::{expand_with_report, plan_lesa, plan_llama_pro, plan_solar};
use deus_core::{
    forward, freeze_mask, plan_interpolation, read_archive, write_archive, BlockId, ExpansionPlan,
    FuseOptions, Method, OtParams, PositionStrategy, TokenSequence,
};
use serde::Serialize;

use crate::{
    ExpandArgs, Failure, GenArgs, InspectArgs, PplArgs, TokensArgs, VerifyArgs, EXIT_FORMAT,
    EXIT_VERIFY_FAILED,
};

type CmdResult = Result<u8, Failure>;

pub fn gen(a: GenArgs) -> CmdResult {
    if a.heads == 0 {
        return Err(Failure::usage("--heads must be positive"));
    }
    let head_dim = match a.head_dim {
        Some(d) => d,
        None if a.hidden.is_multiple_of(a.heads) => a.hidden / a.heads,
        None => {
            return Err(Failure::usage(format!(
                "--hidden {} is not divisible by --heads {}",
                a.hidden, a.heads
            )))
        }
    };
    let config = ModelConfig {
        n_layers: a.layers,
        hidden: a.hidden,
        n_heads: a.heads,
        n_kv_heads: a.kv_heads.unwrap_or(a.heads),
        head_dim,
        d_ff: a.d_ff,
        vocab: a.vocab,
        rope_theta: a.rope_theta,
        rms_eps: a.rms_eps,
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let archive = random_model(&config, a.seed)?;
    write_archive(&a.out, &archive)?;
    out!("wrote {} ({} layers, seed {})", a.out.display(), config.n_layers, a.seed);
    Ok(0)
}

pub fn tokens(a: TokensArgs) -> CmdResult {
    if a.len == 0 || a.vocab == 0 {
        return Err(Failure::usage("--len and --vocab must be positive"));
    }
    let seq = random_tokens(a.seed, a.len, a.vocab)?;
    write_atomic(&a.out, seq.to_text().as_bytes())?;
    out!("wrote {} ({} tokens)", a.out.display(), a.len);
    Ok(0)
}

/// Checks flag combinations without touching the filesystem.
fn check_expand_flags(a: &ExpandArgs) -> Result<(), Failure> {
    let reject = |set: bool, flag: &str| {
        if set {
            Err(Failure::usage(format!("{flag} is not valid with --method {}", a.method)))
        } else {
            Ok(())
        }
    };
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return Err(Failure::usage(format!("--eps must be positive, got {}", a.eps)));
    }
    if !(a.tol.is_finite() && a.tol > 0.0) {
        return Err(Failure::usage(format!("--tol must be positive, got {}", a.tol)));
    }
    if a.max_iter == 0 {
        return Err(Failure::usage("--max-iter must be positive"));
    }
    let interpolation = a.method.is_interpolation();
    reject(!interpolation && a.strategy.is_some(), "--strategy")?;
    reject(!interpolation && a.ratio.is_some(), "--ratio")?;
    reject(a.method != Method::OptDeus && a.head_blocked, "--head-blocked")?;
    reject(a.method != Method::OptDeus && a.raw_eps, "--raw-eps")?;
    reject(a.method != Method::OptDeus && a.trace, "--trace")?;
    reject(a.method != Method::LlamaPro && a.g.is_some(), "--g")?;
    reject(a.method != Method::LlamaPro && a.p.is_some(), "--p")?;
    reject(!matches!(a.method, Method::LlamaPro | Method::Solar) && a.m.is_some(), "--m")?;
    match a.method {
        Method::LlamaPro if a.g.is_none() || a.m.is_none() => {
            Err(Failure::usage("--method llama-pro needs --g and --m"))
        }
        Method::Solar if a.m.is_none() => Err(Failure::usage("--method solar needs --m")),
        _ => Ok(()),
    }
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

#[derive(Serialize)]
struct OtSettings {
    #[serde(flatten)]
    params: OtParams,
    head_blocked: bool,
}

#[derive(Serialize)]
struct PlanSidecar<'a> {
    #[serde(flatten)]
    plan: &'a ExpansionPlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ot: Option<OtSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fusions: Option<&'a [FusionReport]>,
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("plan types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn expand(a: ExpandArgs) -> CmdResult {
    check_expand_flags(&a)?;
    if a.method == Method::Lesa {
        plan_lesa()?;
    }
    let base = read_archive(&a.base)?;
    let n = base.n_layers();
    let ratio = a.method.is_interpolation().then(|| a.ratio.unwrap_or(0.5));
    let plan = match a.method {
        Method::OptDeus | Method::AvgDeus => {
            let strategy = a.strategy.unwrap_or(PositionStrategy::Top);
            plan_interpolation(n, ratio.unwrap_or(0.5), strategy)?.with_method(a.method)?
        }
        Method::LlamaPro => plan_llama_pro(n, a.g.unwrap_or(0), a.m.unwrap_or(0), a.p.unwrap_or(1))?,
        Method::Solar => plan_solar(n, a.m.unwrap_or(0))?,
        Method::Lesa => plan_lesa()?,
    };
    let opts = FuseOptions {
        ot: OtParams {
            epsilon: a.eps,
            max_iter: a.max_iter,
            tol: a.tol,
            mode: if a.raw_eps {
                EpsilonMode::Raw
            } else {
                EpsilonMode::RelativeToMeanCost
            },
        },
        head_blocked: a.head_blocked,
        ..FuseOptions::default()
    };
    let expansion = expand_with_report(&base, &plan, &opts)?;

    let sidecar = PlanSidecar {
        plan: &plan,
        ratio,
        ot: (a.method == Method::OptDeus).then_some(OtSettings {
            params: opts.ot,
            head_blocked: a.head_blocked,
        }),
        fusions: a.trace.then_some(expansion.fusion_reports.as_slice()),
    };
    let plan_path = a.plan.clone().unwrap_or_else(|| sidecar_path(&a.out, ".plan.json"));
    let mask_path = a.mask.clone().unwrap_or_else(|| sidecar_path(&a.out, ".freeze.json"));
    write_archive(&a.out, &expansion.archive)?;
    write_atomic(&plan_path, &to_json(&sidecar))?;
    write_atomic(&mask_path, &to_json(&freeze_mask(&plan)))?;

    let unconverged = expansion
        .fusion_reports
        .iter()
        .flat_map(|r| r.blocks.values())
        .filter(|b| b.solve.as_ref().is_some_and(|s| !s.converged))
        .count();
    out!(
        "wrote {} ({} -> {} layers, method {})",
        a.out.display(),
        n,
        expansion.archive.n_layers(),
        a.method
    );
    out!("plan: {}", plan_path.display());
    out!("freeze mask: {}", mask_path.display());
    if unconverged > 0 {
        out!("warning: {unconverged} transport solves did not converge");
    }
    Ok(0)
}

fn read_tokens(path: &Path) -> Result<TokenSequence, Failure> {
    let seq = match TokenSequence::read(path) {
        Err(ForwardError::Empty) => return Err(Failure::usage("token file needs at least 2 tokens, got 0")),
        other => other?,
    };
    if seq.len() < 2 {
        return Err(Failure::usage(format!(
            "token file needs at least 2 tokens, got {}",
            seq.len()
        )));
    }
    Ok(seq)
}

fn check_compatible(base: &TensorArchive, other: &TensorArchive) -> Result<(), Failure> {
    let (a, b) = (base.config(), other.config());
    if a.hidden != b.hidden || a.vocab != b.vocab {
        return Err(Failure {
            code: EXIT_FORMAT,
            message: format!(
                "archives differ in hidden size or vocabulary ({}x{} vs {}x{})",
                a.hidden, a.vocab, b.hidden, b.vocab
            ),
        });
    }
    Ok(())
}

pub fn verify_fp(a: VerifyArgs) -> CmdResult {
    if !(a.tol.is_finite() && a.tol >= 0.0) {
        return Err(Failure::usage(format!("--tol must be non-negative, got {}", a.tol)));
    }
    let base = read_archive(&a.base)?;
    let expanded = read_archive(&a.expanded)?;
    check_compatible(&base, &expanded)?;
    let tokens = read_tokens(&a.tokens)?;
    let lb = forward(&base, &tokens, false)?.logits;
    let le = forward(&expanded, &tokens, false)?.logits;
    let diff = lb.max_abs_diff(&le).expect("same token count and vocabulary");
    let ppl_base = perplexity_from_logits(&lb, &tokens)?;
    let ppl_expanded = perplexity_from_logits(&le, &tokens)?;

    if a.trace {
        for t in 0..lb.rows() {
            let d = lb.row(t).iter().zip(le.row(t)).map(|(x, y)| (x - y).abs()).fold(0.0_f64, f64::max);
            out!("position {t}: {d:.6e}");
        }
    }
    out!("layers: {} -> {}", base.n_layers(), expanded.n_layers());
    out!("max_abs_logit_diff: {diff:.6e}");
    out!("ppl_base: {ppl_base:.4}");
    out!("ppl_expanded: {ppl_expanded:.4}");
    if diff <= a.tol {
        out!("result: preserved (tol {:.1e})", a.tol);
        Ok(0)
    } else {
        out!("result: NOT preserved (tol {:.1e})", a.tol);
        Ok(EXIT_VERIFY_FAILED)
    }
}

pub fn ppl(a: PplArgs) -> CmdResult {
    let archive = read_archive(&a.archive)?;
    let tokens = read_tokens(&a.tokens)?;
    let logits = forward(&archive, &tokens, false)?.logits;
    out!("{:.4}", perplexity_from_logits(&logits, &tokens)?);
    Ok(0)
}

pub fn inspect(a: InspectArgs) -> CmdResult {
    let archive = read_archive(&a.archive)?;
    let c = archive.config();
    out!(
        "config: n_layers={} hidden={} n_heads={} n_kv_heads={} head_dim={} d_ff={} vocab={} rope_theta={} rms_eps={:e}",
        c.n_layers, c.hidden, c.n_heads, c.n_kv_heads, c.head_dim, c.d_ff, c.vocab, c.rope_theta, c.rms_eps
    );
    out!("layers: {}", c.n_layers);
    for (i, layer) in archive.layers()?.iter().enumerate() {
        let flags: Vec<&str> = [(BlockId::O, "O=0"), (BlockId::Down, "Down=0")]
            .into_iter()
            .filter(|(b, _)| layer.matrix(*b).is_some_and(|m| m.is_zero()))
            .map(|(_, f)| f)
            .collect();
        if flags.is_empty() {
            out!("layer {:>3}", i + 1);
        } else {
            out!("layer {:>3}: {}", i + 1, flags.join(", "));
        }
    }
    out!("tensors:");
    for e in archive.entries() {
        let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        out!("  {:<22} {:<10} {}", e.name, shape.join("x"), e.checksum());
    }
    Ok(0)
}
