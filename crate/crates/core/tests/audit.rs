use rst_core::audit::{run_audit, AuditOptions, AuditScope};
use rst_core::Fault;

fn failures(scope: AuditScope, opts: &AuditOptions) -> (usize, Vec<String>) {
    let mut bad = Vec::new();
    let summary = run_audit(scope, opts, &mut |r| {
        if !r.pass {
            bad.push(format!("{} {} rel={:.3e} abs={:.3e}", r.op, r.instance, r.rel_error, r.max_abs_diff));
        }
    })
    .unwrap();
    assert_eq!(summary.failed, bad.len());
    (summary.total, bad)
}

#[test]
fn tensor_kernels_and_gradients_pass() {
    let (total, bad) = failures(AuditScope::Tensor, &AuditOptions::default());
    assert!(total > 100);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn dre_audits_pass() {
    let (_, bad) = failures(AuditScope::Dre, &AuditOptions::default());
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn rsas_audits_pass() {
    let (_, bad) = failures(AuditScope::Rsas, &AuditOptions::default());
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn ffn_audits_pass() {
    let (_, bad) = failures(AuditScope::Ffn, &AuditOptions::default());
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn model_gradient_audit_passes() {
    let (total, bad) = failures(AuditScope::Model, &AuditOptions::default());
    assert_eq!(total, 1);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn injected_fault_is_reported_against_conv2d() {
    let opts = AuditOptions {
        fault: Some(Fault::Conv2dKernelGrad),
        ..AuditOptions::default()
    };
    let (_, bad) = failures(AuditScope::Tensor, &opts);
    assert!(!bad.is_empty());
    assert!(bad.iter().all(|b| b.starts_with("grad:conv2d")), "{bad:#?}");
}

#[test]
fn scope_names_parse() {
    for s in ["tensor", "dre", "rsas", "ffn", "model", "all"] {
        assert!(s.parse::<AuditScope>().is_ok());
    }
    assert!("everything".parse::<AuditScope>().is_err());
}
