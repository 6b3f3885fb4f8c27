"""Command-line harness: one subcommand per experiment, one immutable
artifact directory per invocation.

    gridsec gen-data        build the synthetic dataset + manifest
    gridsec train           train and evaluate the victim model
    gridsec attack-invert   BN-regularized reconstruction attack
    gridsec attack-extract  pseudo-label model extraction protocol
    gridsec attack-adv      FGSM/PGD evaluation on the test partition
    gridsec attack-poison   backdoor poisoning + dilution retraining
    gridsec defend          litho SRAF attack vs curvature-regularized model
    gridsec reliability     descriptors, PCA scatter, OOD warnings, size table
    gridsec federate        federated training, honest vs one poisoner
    gridsec report          consolidate a finished run directory

Exit codes: 0 success, 2 configuration error (bad flag or bad config file,
nothing written), 1 runtime failure. Errors print a machine-readable JSON
record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from functools import partial

import numpy as np

from . import advattack, decentralized, defense, extraction, inversion, modelcore, reliability, synthgrid
from .config import ConfigError, ExperimentConfig, load_config
from .reports import ReportError, emit_report, fresh_dir, provenance, write_csv, write_json, write_pgm


def _dataset_paths(cfg: ExperimentConfig, data: str | None) -> tuple[str, synthgrid.DatasetManifest]:
    dataset_dir = data or os.path.join(cfg.out_root, "dataset")
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"no manifest at {manifest_path}; run gen-data first")
    return dataset_dir, synthgrid.load_manifest(manifest_path)


def _victim(cfg: ExperimentConfig, model_path: str | None) -> modelcore.GridModel:
    path = model_path or os.path.join(cfg.out_root, "victim", "checkpoint.npz")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no checkpoint at {path}; run train first")
    return modelcore.load_checkpoint(path)


def cmd_gen_data(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "dataset"))
    manifest = synthgrid.build_dataset(cfg.dataset.config(cfg.seed), out_dir)
    write_json(os.path.join(out_dir, "provenance.json"), provenance(cfg))
    designs = len({r.design for r in manifest.samples})
    return f"gen-data: {len(manifest.samples)} samples across {designs} designs -> {out_dir}"


def cmd_train(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    if manifest.split is None:
        raise ValueError("dataset has no split; rebuild with make_split=true")
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "victim"))
    samples = synthgrid.load_samples(dataset_dir, manifest, manifest.split.victim_train)
    test = synthgrid.load_samples(dataset_dir, manifest, manifest.split.test)
    victim = modelcore.train(samples, cfg.train)
    metrics = modelcore.evaluate_auc(victim, test)
    modelcore.save_checkpoint(victim, os.path.join(out_dir, "checkpoint.npz"))
    write_json(os.path.join(out_dir, "metrics.json"), {
        "test_auc": metrics.auc,
        "test_mean_loss": metrics.mean_loss,
        "n_test": metrics.n_samples,
        "train_history": victim.train_history,
        "provenance": provenance(cfg),
    })
    return f"train: test AUC {metrics.auc:.3f} over {metrics.n_samples} samples -> {out_dir}"


def cmd_attack_invert(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    victim = _victim(cfg, model)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "inversion"))
    samples = synthgrid.load_samples(dataset_dir, manifest, manifest.split.victim_train)
    with_macros = [s for s in samples if (s.features[:, :, 0] > 0.5).any()]
    rng = np.random.default_rng(cfg.inversion.seed)
    picks = rng.choice(len(with_macros), size=min(cfg.inversion.trials, len(with_macros)), replace=False)

    rows, iou_plain, iou_reg, iou_rand = [], [], [], []
    first_saved = False
    for t, k in enumerate(picks):
        target_sample = with_macros[int(k)]
        p_target = inversion.TargetPrediction(modelcore.predict(victim, target_sample.features))
        run_plain = inversion.invert(victim, p_target, dataclasses.replace(
            cfg.inversion_config(bn_weight=0.0), seed=cfg.inversion.seed + t), X_true=target_sample.features)
        run_reg = inversion.invert(victim, p_target, dataclasses.replace(
            cfg.inversion_config(), seed=cfg.inversion.seed + t), X_true=target_sample.features)
        base = inversion.random_baseline_iou(victim.in_channels, target_sample.features,
                                             dataclasses.replace(cfg.inversion_config(), seed=cfg.inversion.seed + t))
        iou_plain.append(run_plain.mean_macro_iou)
        iou_reg.append(run_reg.mean_macro_iou)
        iou_rand.append(base)
        rows.append([target_sample.id, f"{run_plain.mean_macro_iou:.6f}",
                     f"{run_reg.mean_macro_iou:.6f}", f"{base:.6f}"])
        if not first_saved:
            synthgrid.save_tensor(os.path.join(out_dir, "reconstruction_alpha0.f32"), run_plain.X_r)
            synthgrid.save_tensor(os.path.join(out_dir, "reconstruction_bn.f32"), run_reg.X_r)
            for ch in range(victim.in_channels):
                write_pgm(os.path.join(out_dir, f"reconstruction_bn_ch{ch}.pgm"), run_reg.X_r[0][:, :, ch])
                write_pgm(os.path.join(out_dir, f"target_ch{ch}.pgm"), target_sample.features[:, :, ch])
            first_saved = True

    write_csv(os.path.join(out_dir, "trials.csv"), ["sample", "iou_alpha0", "iou_bn", "iou_random"], rows)
    summary = {
        "median_iou_alpha0": float(np.median(iou_plain)),
        "median_iou_bn": float(np.median(iou_reg)),
        "median_iou_random": float(np.median(iou_rand)),
        "bn_weight": cfg.inversion.bn_weight,
        "trials": len(rows),
        "provenance": provenance(cfg),
    }
    write_json(os.path.join(out_dir, "metrics.json"), summary)
    return (f"attack-invert: median macro IoU {summary['median_iou_bn']:.3f} (bn) vs "
            f"{summary['median_iou_alpha0']:.3f} (plain) vs {summary['median_iou_random']:.3f} (random) -> {out_dir}")


def cmd_attack_extract(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "extraction"))
    victim = _victim(cfg, model) if model or os.path.isfile(
        os.path.join(cfg.out_root, "victim", "checkpoint.npz")) else None
    report, ledger = extraction.run_extraction_experiment(manifest, dataset_dir, cfg.extraction(), victim=victim)
    ledger.to_csv(os.path.join(out_dir, "ledger.csv"))
    write_json(os.path.join(out_dir, "extraction_report.json"), {
        "report": report.as_dict(),
        "scenario": cfg.scenario,
        "provenance": provenance(cfg),
    })
    write_csv(os.path.join(out_dir, "table2_row.csv"),
              ["victim_auc", "baseline_auc", "attack1_auc", "attack2_auc", "queries", "pseudo_mode"],
              [report.csv_row()])
    return (f"attack-extract: victim {report.victim_auc:.3f} baseline {report.baseline_auc:.3f} "
            f"attack1 {report.attack1_auc:.3f} attack2 {report.attack2_auc:.3f} -> {out_dir}")


def cmd_attack_adv(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    victim = _victim(cfg, model)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "adversarial"))
    test = synthgrid.load_samples(dataset_dir, manifest, manifest.split.test)[: cfg.adv.n_eval]
    budget = cfg.budget()

    def pooled(preds):
        scores = np.concatenate([p.ravel() for p in preds])
        labels = np.concatenate([s.label.ravel() for s in test])
        return modelcore.pooled_auc(scores, labels)

    clean_preds, fgsm_preds, pgd_preds = [], [], []
    fgsm_losses, pgd_losses, outcomes = [], [], []
    for i, s in enumerate(test):
        o_f = advattack.fgsm(victim, s.features, s.label, budget)
        o_p = advattack.pgd(victim, s.features, s.label, budget)
        clean_preds.append(o_f.clean_pred)
        fgsm_preds.append(o_f.attacked_pred)
        pgd_preds.append(o_p.attacked_pred)
        fgsm_losses.append(o_f.attacked_loss)
        pgd_losses.append(o_p.attacked_loss)
        outcomes.append({"id": s.id, "fgsm_loss": o_f.attacked_loss, "pgd_loss": o_p.attacked_loss,
                         "clean_loss": o_f.clean_loss, "linf_fgsm": o_f.perturbation_linf,
                         "linf_pgd": o_p.perturbation_linf})
        if i == 0:
            synthgrid.save_tensor(os.path.join(out_dir, "attacked_pgd.f32"), o_p.X_p)
    report = {
        "epsilon": budget.epsilon,
        "steps": budget.steps,
        "clean_auc": pooled(clean_preds),
        "fgsm_auc": pooled(fgsm_preds),
        "pgd_auc": pooled(pgd_preds),
        "fgsm_mean_loss": float(np.mean(fgsm_losses)),
        "pgd_mean_loss": float(np.mean(pgd_losses)),
        "n_eval": len(test),
        "provenance": provenance(cfg),
    }
    write_json(os.path.join(out_dir, "adv_report.json"), report)
    write_json(os.path.join(out_dir, "outcomes.json"), {"outcomes": outcomes})
    return (f"attack-adv: AUC clean {report['clean_auc']:.3f} fgsm {report['fgsm_auc']:.3f} "
            f"pgd {report['pgd_auc']:.3f} -> {out_dir}")


def cmd_attack_poison(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "poisoning"))
    train_samples = synthgrid.load_samples(dataset_dir, manifest, manifest.split.victim_train)
    test = synthgrid.load_samples(dataset_dir, manifest, manifest.split.test)
    trigger = cfg.poison.trigger()

    clean_model = modelcore.train(train_samples, cfg.train)
    poisoned_data = advattack.poison_dataset(train_samples, trigger, cfg.poison.rate, seed=cfg.poison.seed)
    poisoned_model = modelcore.train(poisoned_data, cfg.train)
    aug = defense.AugmentConfig(hflip=True, vflip=True, rotations=True)
    diluted_model = modelcore.train(defense.dilute_augment(poisoned_data, aug), cfg.train)

    report = {
        "poison_rate": cfg.poison.rate,
        "trigger_rate_clean_model": advattack.trigger_success_rate(clean_model, trigger, test),
        "trigger_rate_poisoned_model": advattack.trigger_success_rate(poisoned_model, trigger, test),
        "trigger_rate_diluted_model": advattack.trigger_success_rate(diluted_model, trigger, test),
        "clean_auc_poisoned_model": modelcore.evaluate_auc(poisoned_model, test).auc,
        "clean_auc_diluted_model": modelcore.evaluate_auc(diluted_model, test).auc,
        "augmentation": aug.transform_names(),
        "provenance": provenance(cfg),
    }
    write_json(os.path.join(out_dir, "poison_report.json"), report)
    return (f"attack-poison: trigger rate clean {report['trigger_rate_clean_model']:.3f} "
            f"poisoned {report['trigger_rate_poisoned_model']:.3f} "
            f"diluted {report['trigger_rate_diluted_model']:.3f} -> {out_dir}")


def cmd_defend(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "defense"))
    params = cfg.clips.params()
    train_clips = synthgrid.generate_clips(cfg.clips.train_count, cfg.clips.seed, params)
    eval_clips = synthgrid.generate_clips(cfg.clips.eval_count, cfg.clips.seed + 1, params)
    clip_cfg = modelcore.TrainConfig(epochs=cfg.clips.epochs, lr=cfg.clips.lr, seed=cfg.train.seed)

    vanilla = defense.robust_train(train_clips, clip_cfg, defense.CureConfig(alpha=0.0, h=cfg.defense.h))
    robust = defense.robust_train(train_clips, clip_cfg, cfg.defense.cure())
    attack_fn = partial(advattack.insert_sraf, cfg=cfg.sraf.config())
    report = defense.evaluate_defense(vanilla, robust, lambda m, c: attack_fn(m, c), eval_clips)
    report.cure = cfg.defense.cure()

    write_json(os.path.join(out_dir, "defense_report.json"), {
        "report": report.as_dict(),
        "sraf": dataclasses.asdict(cfg.sraf),
        "provenance": provenance(cfg),
    })
    write_csv(os.path.join(out_dir, "table3.csv"), ["model", "auc", "attack_success"], [
        ["vanilla", f"{report.vanilla_auc:.6f}", f"{report.vanilla_attack_success:.6f}"],
        ["robust", f"{report.robust_auc:.6f}", f"{report.robust_attack_success:.6f}"],
    ])
    modelcore.save_checkpoint(robust, os.path.join(out_dir, "robust_checkpoint.npz"))
    return (f"defend: attack success vanilla {report.vanilla_attack_success:.3f} -> "
            f"robust {report.robust_attack_success:.3f} (AUC {report.vanilla_auc:.3f} -> "
            f"{report.robust_auc:.3f}) -> {out_dir}")


def cmd_reliability(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "reliability"))
    samples = synthgrid.load_samples(dataset_dir, manifest)
    descriptors = np.stack([reliability.summarize(s) for s in samples])
    meta = [(s.design_name, s.family, s.size_class) for s in samples]

    pca = reliability.fit_pca(descriptors, k=cfg.reliability.pca_k)
    reliability.project(pca, descriptors, meta,
                        csv_path=os.path.join(out_dir, "scatter.csv"),
                        svg_path=os.path.join(out_dir, "scatter.svg"))

    small_idx = [i for i, s in enumerate(samples) if s.size_class == "small"]
    large_macro_idx = [i for i, s in enumerate(samples)
                       if s.size_class == "large" and (s.features[:, :, 0] > 0.5).any()]
    ood = None
    if small_idx and large_macro_idx:
        small_desc = descriptors[small_idx]
        pca_small = reliability.fit_pca(small_desc, k=min(cfg.reliability.pca_k, len(small_idx) - 1))
        probe = reliability.similarity_score(pca_small, small_desc, descriptors[large_macro_idx[0]])
        inlier = reliability.similarity_score(pca_small, small_desc, small_desc[0])
        ood = {
            "query": samples[large_macro_idx[0]].id,
            "score": float(probe.scores[0]),
            "warn": bool(probe.warn[0]),
            "threshold": probe.threshold,
            "variance_floored": probe.variance_floored,
            "inlier_score": float(inlier.scores[0]),
            "inlier_warn": bool(inlier.warn[0]),
        }
        write_json(os.path.join(out_dir, "similarity_report.json"), {"ood_probe": ood,
                                                                     "provenance": provenance(cfg)})

    table = reliability.partitioned_training_experiment(manifest, dataset_dir, cfg.train)
    table.to_csv(os.path.join(out_dir, "size_table.csv"))
    write_json(os.path.join(out_dir, "size_table.json"), {"table": table.as_dict(),
                                                          "provenance": provenance(cfg)})

    audit_ids = manifest.split.attacker_unlabeled if manifest.split else [r.id for r in manifest.samples]
    audit_samples = synthgrid.load_samples(dataset_dir, manifest, audit_ids)
    victim_path = model or os.path.join(cfg.out_root, "victim", "checkpoint.npz")
    if os.path.isfile(victim_path):
        audit = reliability.degradation_audit(modelcore.load_checkpoint(victim_path), audit_samples)
        write_json(os.path.join(out_dir, "degradation.json"), {"audit": audit.as_dict(),
                                                               "provenance": provenance(cfg)})
    warn_note = "" if ood is None else f", OOD warn={ood['warn']}"
    return f"reliability: table4 row argmax {table.row_argmax()}{warn_note} -> {out_dir}"


def cmd_federate(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    dataset_dir, manifest = _dataset_paths(cfg, data)
    out_dir = fresh_dir(out or os.path.join(cfg.out_root, "federation"))
    fed = cfg.federation
    train_samples = synthgrid.load_samples(dataset_dir, manifest, manifest.split.victim_train)
    test = synthgrid.load_samples(dataset_dir, manifest, manifest.split.test)

    by_family: dict[str, list] = {}
    for s in train_samples:
        by_family.setdefault(s.family, []).append(s)
    families = sorted(by_family)
    clients = [[] for _ in range(fed.clients)]
    for i, fam in enumerate(families):
        clients[i % fed.clients].extend(by_family[fam])
    if any(not c for c in clients):
        raise decentralized.FederationError(
            f"{fed.clients} clients but only {len(families)} families to assign")

    base = decentralized.FederationConfig(
        clients=fed.clients, rounds=fed.rounds, local_epochs=fed.local_epochs,
        train=modelcore.TrainConfig(epochs=1, batch_size=fed.batch_size, lr=fed.lr,
                                    momentum=0.0, seed=fed.seed),
        seed=fed.seed,
    )
    _, honest_report = decentralized.run_federation(base, clients, test)

    trigger = cfg.poison.trigger()
    roles = tuple(
        decentralized.ClientRole("poisoner", trigger, fed.poison_rate) if i == 0
        else decentralized.ClientRole()
        for i in range(fed.clients)
    )
    poisoned_cfg = dataclasses.replace(base, roles=roles)
    final_model, poisoned_report = decentralized.run_federation(poisoned_cfg, clients, test)

    honest_report.to_csv(os.path.join(out_dir, "rounds_honest.csv"))
    poisoned_report.to_csv(os.path.join(out_dir, "rounds_poisoned.csv"))
    modelcore.save_checkpoint(final_model, os.path.join(out_dir, "final_poisoned_checkpoint.npz"))
    report = {
        "honest": honest_report.as_dict(),
        "poisoned": poisoned_report.as_dict(),
        "final_honest_auc": honest_report.rounds[-1].test_auc,
        "final_poisoned_auc": poisoned_report.rounds[-1].test_auc,
        "final_poisoned_trigger_rate": poisoned_report.rounds[-1].trigger_rate,
        "provenance": provenance(cfg),
    }
    write_json(os.path.join(out_dir, "federation_report.json"), report)
    return (f"federate: honest AUC {report['final_honest_auc']:.3f}, poisoned AUC "
            f"{report['final_poisoned_auc']:.3f}, trigger rate "
            f"{report['final_poisoned_trigger_rate']:.3f} -> {out_dir}")


def cmd_report(cfg: ExperimentConfig, out: str | None, data: str | None, model: str | None) -> str:
    run_root = data or cfg.out_root
    out_dir = emit_report(run_root)
    return f"report: consolidated artifacts -> {out_dir}"


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack-invert": cmd_attack_invert,
    "attack-extract": cmd_attack_extract,
    "attack-adv": cmd_attack_adv,
    "attack-poison": cmd_attack_poison,
    "defend": cmd_defend,
    "reliability": cmd_reliability,
    "federate": cmd_federate,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsec", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file (defaults otherwise)")
        p.add_argument("--out", default=None, help="artifact directory for this run")
        p.add_argument("--data", default=None, help="dataset directory (or run root for report)")
        p.add_argument("--model", default=None, help="victim checkpoint path")
    return parser


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        record = {"error": type(exc).__name__, "detail": str(exc)}
        if isinstance(exc, ConfigError):
            record["field"] = exc.path
        print(json.dumps(record), file=sys.stderr)
        return 2
    try:
        summary = COMMANDS[args.command](cfg, args.out, args.data, args.model)
    except Exception as exc:  # runtime failure: report and exit nonzero
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1
    print(summary)
    return 0


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
