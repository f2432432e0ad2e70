"""Train / score / evaluate orchestration shared by the CLI and the tests."""

import json
import logging
import time
import warnings
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import detect, eval as eval_mod, fusion, ocsvm, optflow, sdae
from .errors import DomainError, FormatError, LayoutError
from .ingest import (
    PatchKind,
    PatchSpec,
    concat_batches,
    extract_appearance_patches,
    extract_motion_patches,
    flow_bounds,
    fuse_early,
    grid_origins,
    list_clips,
    load_clip,
    subsample,
)
from .linalg import fork_rng

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "amdn-bundle"
KEYS = config_mod.PIPE_KEYS


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def load_split(root, with_gt=True):
    clips = []
    for cid in list_clips(root):
        seq, gt = load_clip(root, cid, with_gt)
        clips.append((seq, gt))
    return clips


def clip_flows(root, seq, cfg):
    method = cfg["flow"]["method"]
    if method == "flo-dir":
        return optflow.load_flo_dir(Path(root) / seq.clip_id / "flow", len(seq))
    return optflow.clip_flows(seq, cfg["flow"]["alpha"], cfg["flow"]["iters"])


def export_flows(root, cfg):
    """Write Horn-Schunck flow for every clip under ``<clip>/flow``."""
    n = 0
    for cid in list_clips(root):
        seq, _ = load_clip(root, cid, with_gt=False)
        out = Path(root) / cid / "flow"
        out.mkdir(exist_ok=True)
        for t in range(len(seq) - 1):
            f = optflow.horn_schunck(seq.frames[t], seq.frames[t + 1], cfg["flow"]["alpha"], cfg["flow"]["iters"])
            optflow.write_flo(out / optflow.FLOW_PATTERN.format(t), f)
            n += 1
    return n


def training_batches(clips, flows, cfg):
    """Sampled patch batches for the three pipelines plus the motion bounds.

    ``sample_cap`` is split evenly across clips so every clip contributes.
    """
    seed = cfg["seed"]
    specs = config_mod.patch_specs(cfg)
    caps = {k: cfg["patches"][name]["sample_cap"] for k, name in zip(KEYS, ("appearance", "motion", "joint"))}
    bounds = flow_bounds(f for fl in flows.values() for f in fl)
    log.info("motion normalisation bounds u=%s v=%s", bounds[0], bounds[1])
    n = len(clips)
    out = {k: [] for k in KEYS}
    for seq, _ in clips:
        cid = seq.clip_id
        out["A"].append(
            extract_appearance_patches(seq, specs["A"], fork_rng(seed, "patches", "A", cid), caps["A"] // n)
        )
        mot = extract_motion_patches(flows[cid], specs["M"], bounds, cid)
        out["M"].append(subsample(mot, caps["M"] // n, fork_rng(seed, "patches", "M", cid)))
        jspec = specs["J"]
        app1 = extract_appearance_patches(seq, PatchSpec(jspec.scales, jspec.stride, jspec.target_w, jspec.target_h, 1))
        jmot = extract_motion_patches(flows[cid], PatchSpec(jspec.scales, jspec.stride, jspec.target_w, jspec.target_h, 2), bounds, cid)
        out["J"].append(subsample(fuse_early(app1, jmot), caps["J"] // n, fork_rng(seed, "patches", "J", cid)))
    batches = {k: concat_batches(v) for k, v in out.items()}
    batches["A"].norm_bounds = bounds
    return batches, bounds


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


class Bundle:
    """Trained models plus the operating threshold and test-grid geometry."""

    def __init__(self, models, eta, test_spec, meta=None):
        self.models = models
        self.eta = float(eta)
        self.test_spec = test_spec
        self.meta = meta or {}

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for k in KEYS:
            kind = PatchKind(k)
            sdae.save_model(d / f"sdae_{k}.json", self.models.sdae[kind])
            ocsvm.save_model(d / f"ocsvm_{k}.json", self.models.ocsvm[kind])
        fusion.save(d / "fusion.json", self.models.fusion)
        doc = {
            "format": BUNDLE_FORMAT,
            "version": 1,
            "eta": self.eta,
            "motion_bounds": [list(b) for b in self.models.motion_bounds],
            "test_patch": {"size": self.test_spec.scales[0], "stride": self.test_spec.stride, "target": self.test_spec.target_w},
            "meta": self.meta,
        }
        (d / "bundle.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        path = d / "bundle.json"
        if not path.is_file():
            raise LayoutError(f"{d}: no bundle.json (run `amdn train` first)")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if doc.get("format") != BUNDLE_FORMAT:
            raise FormatError(f"{path}: not a model bundle")
        sd = {PatchKind(k): sdae.load_model(d / f"sdae_{k}.json") for k in KEYS}
        oc = {PatchKind(k): ocsvm.load_model(d / f"ocsvm_{k}.json") for k in KEYS}
        weights = fusion.load(d / "fusion.json")
        bounds = tuple(tuple(b) for b in doc["motion_bounds"])
        tp = doc["test_patch"]
        spec = PatchSpec((tp["size"],), tp["stride"], tp["target"], tp["target"], 1)
        return cls(detect.Models(sd, oc, weights, bounds), doc["eta"], spec, doc.get("meta"))


def train_bundle(train_root, cfg):
    """Full training run: flow, patches, three SDAEs, three one-class SVMs,
    fusion weights, score calibration and the operating threshold."""
    seed = cfg["seed"]
    t0 = time.perf_counter()
    clips = load_split(train_root, with_gt=False)
    flows = {seq.clip_id: clip_flows(train_root, seq, cfg) for seq, _ in clips}
    log.info("loaded %d training clips, flow via %s (%.1fs)", len(clips), cfg["flow"]["method"], time.perf_counter() - t0)
    batches, bounds = training_batches(clips, flows, cfg)
    for k in KEYS:
        log.info("pipeline %s: %d training patches of dim %d", k, len(batches[k]), batches[k].dim)

    sd_models, oc_models, feats = {}, {}, []
    for k in KEYS:
        kind = PatchKind(k)
        scfg = config_mod.sdae_config(cfg, k)
        t1 = time.perf_counter()
        model = sdae.stack_and_finetune(batches[k], scfg, fork_rng(seed, "sdae", k))
        model.norm_bounds = bounds
        sd_models[kind] = model
        sample = subsample(batches[k], config_mod.ocsvm_max_train(cfg, k), fork_rng(seed, "ocsvm-sample", k))
        f = sdae.extract_features(model, sample)
        ocfg = config_mod.ocsvm_config(cfg, k)
        oc = ocsvm.train(f, ocfg, kind, rng=fork_rng(seed, "ocsvm-sigma", k))
        oc_models[kind] = oc
        feats.append(f)
        log.info(
            "pipeline %s: SDAE %s, one-class SVM nu=%g sigma=%.6g SVs=%d/%d rho=%.6g (%.1fs)",
            k, scfg.layer_dims, ocfg.nu, oc.sigma, oc.n_support, oc.n_train, oc.rho, time.perf_counter() - t1,
        )

    fc = cfg["fusion"]
    weights = fusion.learn_weights(
        feats, fc["subspace_dim"], fc["lambda_s"], fc["trace_norm"], fc["score_mode"], fc["center"]
    )
    models = detect.Models(sd_models, oc_models, weights, bounds)
    spec = config_mod.patch_specs(cfg)["test"]

    # calibration and threshold on the training frames, scored on the test grid
    maps = []
    for seq, _ in clips:
        maps.extend(detect.score_clip(seq, flows[seq.clip_id], models, spec))
    raw = np.concatenate([m.pipeline_scores.reshape(-1, 3) for m in maps])
    weights.calibrate(raw)
    frame_scores = []
    for m in maps:
        m.scores = weights.fused(m.pipeline_scores)
        frame_scores.append(float(m.scores.max()))
    eta = cfg["detect"]["eta"]
    if eta is None:
        eta = float(np.quantile(frame_scores, cfg["detect"]["eta_quantile"]))
    log.info("fusion alpha %s, traces %s, eta %.6g", fusion.format_alpha(weights.alpha), weights.traces, eta)
    log.info("training finished in %.1fs", time.perf_counter() - t0)
    meta = {"seed": seed, "train_frames": len(frame_scores)}
    return Bundle(models, eta, spec, meta)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def score_split(bundle, test_root, cfg, out_dir):
    """Score every clip of ``test_root``; CSVs go to ``<out_dir>/<clip>/``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"format": "amdn-scores", "eta": bundle.eta, "clips": []}
    write_masks = cfg["detect"]["write_masks"]
    for cid in list_clips(test_root):
        seq, _ = load_clip(test_root, cid, with_gt=False)
        flows = clip_flows(test_root, seq, cfg)
        maps = detect.score_clip(seq, flows, bundle.models, bundle.test_spec)
        if not maps:
            warnings.warn(f"clip {cid}: no frames scored")
            continue
        result = detect.decide(maps, bundle.eta, (seq.height, seq.width))
        detect.write_clip_scores(out_dir / cid, maps, result, masks=write_masks)
        m0 = maps[0]
        index["clips"].append(
            {"clip_id": cid, "rows": m0.grid_rows, "cols": m0.grid_cols, "stride": m0.stride,
             "patch_size": m0.patch_size, "frames": len(maps)}
        )
        log.info("scored clip %s: %d frames, %d flagged", cid, len(maps), int(result.frame_flags.sum()))
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def read_scores(scores_dir):
    scores_dir = Path(scores_dir)
    path = scores_dir / "index.json"
    if not path.is_file():
        raise LayoutError(f"{scores_dir}: no index.json (run `amdn score` first)")
    index = json.loads(path.read_text())
    return index, {c["clip_id"]: detect.read_clip_scores(scores_dir / c["clip_id"], c) for c in index["clips"]}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(scores_dir, test_root, out_dir, weights=None, overlap=eval_mod.OVERLAP_THRESHOLD):
    """Frame- and pixel-level ROC over a scored split; returns the summary."""
    index, per_clip = read_scores(scores_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_scores, labels, pipe_scores, maps_all, masks_all = [], [], [], [], []
    have_masks = True
    for cid, maps in per_clip.items():
        seq, gt = load_clip(test_root, cid, with_gt=True)
        for m in maps:
            frame_scores.append(float(m.scores.max()))
            labels.append(int(gt.frame_labels[m.frame_index]))
            if m.pipeline_scores is not None:
                pipe_scores.append(m.pipeline_scores.reshape(-1, 3).max(axis=0))
            maps_all.append(m)
        if gt.has_masks:
            masks_all.extend(gt.pixel_masks[m.frame_index] for m in maps)
        else:
            have_masks = False
    if not frame_scores:
        raise DomainError("no scored frames to evaluate")
    frame_scores = np.asarray(frame_scores)
    labels = np.asarray(labels)
    roc = eval_mod.frame_roc(frame_scores, labels)
    eval_mod.write_roc_csv(out_dir / "roc.csv", roc)
    eval_mod.write_gnuplot(out_dir / "roc.dat", roc, "frame-level ROC")
    eval_mod.write_pr_csv(out_dir / "pr.csv", eval_mod.precision_recall(frame_scores, labels))
    eta = float(index["eta"])
    flagged = frame_scores > eta
    summary = {
        "frames": int(labels.size),
        "anomalous_frames": int(labels.sum()),
        "eta": eta,
        "frame": {
            "auc": roc.auc,
            "eer": roc.eer,
            "tpr_at_eta": float(flagged[labels == 1].mean()),
            "fpr_at_eta": float(flagged[labels == 0].mean()),
        },
    }
    if len(pipe_scores) == len(frame_scores):
        P = np.asarray(pipe_scores)
        summary["pipelines"] = {k: eval_mod.frame_roc(P[:, i], labels).auc for i, k in enumerate(KEYS)}
    if have_masks:
        proc = eval_mod.pixel_roc(maps_all, masks_all, overlap)
        eval_mod.write_roc_csv(out_dir / "roc_pixel.csv", proc)
        eval_mod.write_gnuplot(out_dir / "roc_pixel.dat", proc, "pixel-level ROC")
        summary["pixel"] = {"auc": proc.auc, "eer": proc.eer}
    if weights is not None:
        summary["alpha"] = [float(a) for a in weights.alpha]
    eval_mod.write_summary(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# nu sweep
# ---------------------------------------------------------------------------


def nu_grid(bundle, train_root, cfg, nus, test_root=None):
    """Retrain the three one-class SVMs for each ``nu`` on the bundle's SDAE
    features; report SV and training-outlier fractions, and the
    single-pipeline frame AUC on ``test_root`` when given. Margin slack
    within the KKT tolerance does not count as an outlier."""
    seed = cfg["seed"]
    clips = load_split(train_root, with_gt=False)
    flows = {seq.clip_id: clip_flows(train_root, seq, cfg) for seq, _ in clips}
    batches, _ = training_batches(clips, flows, cfg)
    test_feats = None
    if test_root is not None:
        test_feats, test_labels = _test_features(bundle, test_root, cfg)
    rows = []
    for k in KEYS:
        kind = PatchKind(k)
        sample = subsample(batches[k], config_mod.ocsvm_max_train(cfg, k), fork_rng(seed, "ocsvm-sample", k))
        f = sdae.extract_features(bundle.models.sdae[kind], sample)
        base = config_mod.ocsvm_config(cfg, k)
        for nu in nus:
            ocfg = ocsvm.OcsvmConfig(float(nu), base.rbf_sigma, base.tolerance, base.max_passes, base.sigma_sample)
            model = ocsvm.train(f, ocfg, kind, rng=fork_rng(seed, "ocsvm-sigma", k))
            train_scores = ocsvm.score_batch(model, f, kind)
            row = {
                "pipeline": k,
                "nu": float(nu),
                "n_train": model.n_train,
                "sv_fraction": model.n_support / model.n_train,
                "outlier_fraction": float(np.mean(train_scores > ocfg.tolerance)),
                "frame_auc": None,
            }
            if test_feats is not None:
                fs = [ocsvm.score_batch(model, tf, kind).max() for tf in test_feats[k]]
                row["frame_auc"] = eval_mod.frame_roc(fs, test_labels).auc
            rows.append(row)
            log.info("nu-grid %s nu=%g: SV %.3f outliers %.3f auc %s", k, nu, row["sv_fraction"],
                     row["outlier_fraction"], row["frame_auc"])
    return rows


def _test_features(bundle, test_root, cfg):
    feats = {k: [] for k in KEYS}
    labels = []
    spec = bundle.test_spec
    for cid in list_clips(test_root):
        seq, gt = load_clip(test_root, cid, with_gt=True)
        flows = clip_flows(test_root, seq, cfg)
        origins = grid_origins(seq.width, seq.height, spec.scales[0], spec.stride)
        for t, frame in enumerate(seq.frames):
            patches = detect.grid_patches(frame, flows[t], bundle.models.motion_bounds, origins, spec.scales[0], spec.target_w)
            for k in KEYS:
                kind = PatchKind(k)
                feats[k].append(sdae.encode(bundle.models.sdae[kind], patches[kind]))
            labels.append(int(gt.frame_labels[t]))
    return feats, np.asarray(labels)


def write_nu_grid(path, rows):
    with open(path, "w") as fh:
        fh.write("pipeline,nu,n_train,sv_fraction,outlier_fraction,frame_auc\n")
        for r in rows:
            auc = "" if r["frame_auc"] is None else repr(r["frame_auc"])
            fh.write(f"{r['pipeline']},{r['nu']!r},{r['n_train']},{r['sv_fraction']!r},{r['outlier_fraction']!r},{auc}\n")
