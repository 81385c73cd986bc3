use gconv_core::nn::init::Init;
use gconv_core::nn::ConvKind;
use gconv_core::zoo::{
    build_model, count_weights, ArchSpec, CountPolicy, ParamReport, Resolution, Role,
};
use serde::Serialize;

use crate::args::CommonArgs;
use crate::config::RunConfig;
use crate::error::Result;
use crate::output::{csv_table, json_report, write_file, Format, Meta};
use crate::Outcome;

pub const RESOLUTIONS: [Resolution; 3] = [Resolution::R32, Resolution::R128, Resolution::R256];
/// Published conv-weight counts of the 32-resolution generators.
pub const TARGETS: [(ConvKind, f64); 2] = [(ConvKind::Conv, 3.54e6), (ConvKind::GConv, 4.37e6)];
pub const TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetCheck {
    pub resolution: Resolution,
    pub conv_kind: ConvKind,
    pub conv_weights: usize,
    pub target: f64,
    pub relative_difference: f64,
    pub passed: bool,
}

/// `gconv.conv_weights = conv.conv_weights + gconv.gconv_extra` at one
/// resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtraCheck {
    pub resolution: Resolution,
    pub conv_weights: usize,
    pub gconv_weights: usize,
    pub gconv_extra: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub reports: Vec<ParamReport>,
    pub targets: Vec<TargetCheck>,
    pub extra: Vec<ExtraCheck>,
}

impl AuditReport {
    pub fn report(&self, resolution: Resolution, kind: ConvKind) -> Option<&ParamReport> {
        self.reports
            .iter()
            .find(|r| r.resolution == resolution && r.conv_kind == kind)
    }

    pub fn failures(&self) -> Vec<String> {
        let t = self.targets.iter().filter(|c| !c.passed).map(|c| {
            format!(
                "{} {} generator: {} conv weights vs {} ({:+.4}%)",
                c.resolution,
                c.conv_kind,
                c.conv_weights,
                c.target,
                100.0 * c.relative_difference
            )
        });
        let e = self.extra.iter().filter(|c| !c.passed).map(|c| {
            format!(
                "{} generator: {} gconv weights != {} conv + {} extra",
                c.resolution, c.gconv_weights, c.conv_weights, c.gconv_extra
            )
        });
        t.chain(e).collect()
    }
}

#[derive(Serialize)]
struct Row {
    resolution: Resolution,
    conv_kind: ConvKind,
    total_weights: usize,
    conv_weights: usize,
    gconv_extra: usize,
}

/// Weight counts of every image generator in both layer kinds.
pub fn param_audit() -> Result<AuditReport> {
    let mut reports = Vec::new();
    for res in RESOLUTIONS {
        for kind in [ConvKind::Conv, ConvKind::GConv] {
            let spec = ArchSpec::new(res, Role::Generator, kind).with_init(Init::Zeros);
            reports.push(count_weights(&build_model(&spec)?, CountPolicy::ConvOnly));
        }
    }
    let find = |res, kind| {
        reports
            .iter()
            .find(|r: &&ParamReport| r.resolution == res && r.conv_kind == kind)
            .expect("audited above")
    };
    let targets = TARGETS
        .iter()
        .map(|&(kind, target)| {
            let n = find(Resolution::R32, kind).conv_weights;
            let rel = (n as f64 - target) / target;
            TargetCheck {
                resolution: Resolution::R32,
                conv_kind: kind,
                conv_weights: n,
                target,
                relative_difference: rel,
                passed: rel.abs() <= TOLERANCE,
            }
        })
        .collect();
    let extra = RESOLUTIONS
        .iter()
        .map(|&res| {
            let c = find(res, ConvKind::Conv);
            let g = find(res, ConvKind::GConv);
            ExtraCheck {
                resolution: res,
                conv_weights: c.conv_weights,
                gconv_weights: g.conv_weights,
                gconv_extra: g.gconv_extra,
                passed: c.gconv_extra == 0 && g.conv_weights == c.conv_weights + g.gconv_extra,
            }
        })
        .collect();
    Ok(AuditReport {
        reports,
        targets,
        extra,
    })
}

pub fn cmd(args: &CommonArgs) -> Result<Outcome> {
    let cfg = RunConfig::resolve(args, RunConfig::default())?;
    let audit = param_audit()?;
    let json = json_report(&Meta::new("param-audit", 1), &audit);
    let stdout = match cfg.format {
        Format::Json => json.clone(),
        Format::Csv => csv_table(
            &audit
                .reports
                .iter()
                .map(|r| Row {
                    resolution: r.resolution,
                    conv_kind: r.conv_kind,
                    total_weights: r.total_weights,
                    conv_weights: r.conv_weights,
                    gconv_extra: r.gconv_extra,
                })
                .collect::<Vec<_>>(),
        ),
    };
    if let Some(dir) = cfg.out_dir()? {
        write_file(&dir.join("param_audit.json"), &json)?;
    }
    Ok(Outcome {
        stdout,
        failures: audit.failures(),
    })
}
