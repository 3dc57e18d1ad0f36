"""Training, inference and cross-validation flows.

Training: merge annotator masks by majority vote, fit the pixel model, smooth
with the dense CRF, cut segments, label them by maximum ground-truth overlap,
fit the GMM vocabulary, encode segments and train the one-vs-all SVM.
Inference replays the pixel stage and lets the segment classifier relabel
every segment.
"""
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import crf as crf_mod
from . import evaluation as ev
from .descriptors import FilterBankParams, dense_descriptors, pixel_descriptors
from .encoding import UnencodableSegmentError, fisher_encode
from .gmm import GmmModel, fit_gmm, read_gmm, write_gmm
from .imaging import (
    BACKGROUND, CLASS_NAMES, N_CLASSES, filter_empty, load_annotations, load_image,
    load_labelmap, make_folds, merge_annotations,
)
from .segments import assign_gt_label, extract_segments, relabel, segments_from_truth
from .svm import predict_many, read_svm, train_ova_svm, write_svm
from .unary import (
    class_weights, read_probabilities, read_unary, train_unary, unary_probabilities,
    write_unary,
)

log = logging.getLogger(__name__)

ARTIFACTS = {"unary": "unary.nzru", "gmm": "gmm.nzrg", "svm": "svm.nzrs"}
META_FILE = "artifacts.json"
OVERLAY_COLORS = np.array([
    [0.0, 0.0, 0.0],
    [0.1, 0.8, 0.1],
    [1.0, 0.8, 0.0],
    [0.9, 0.1, 0.1],
])


# --------------------------------------------------------------------------
# errors

class PipelineError(Exception):
    exit_code = 1

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class NumericError(PipelineError):
    exit_code = 4


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PipelineConfig:
    manifest: str = "corpus/manifest.json"
    model_dir: str = "models"
    gmm_k: int = 64
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-6
    gmm_max_samples: int = 10000
    patch_size: int = 7
    fv_stride: int = 1
    unary_patch: int = 15
    unary_epochs: int = 200
    unary_max_samples: int = 40000
    crf_iters: int = 5
    crf_tol: float = 1e-3
    theta_pos: float = 3.0
    theta_int: float = 0.3
    kernel_weights: tuple = (0.1, 0.1)
    svm_c: float = 1.0
    svm_epochs: int = 300
    class_weighting: str = "on"
    folds: int = 5
    seed: int = 0
    min_area: int = 25

    # paths and fold count do not change what a trained model computes
    NON_MODEL_KEYS = ("manifest", "model_dir", "folds")

    def validate(self):
        checks = [
            (self.gmm_k >= 1, "gmm_k must be >= 1"),
            (self.gmm_max_iters >= 1, "gmm_max_iters must be >= 1"),
            (self.gmm_tol >= 0, "gmm_tol must be >= 0"),
            (self.gmm_max_samples >= self.gmm_k, "gmm_max_samples must be >= gmm_k"),
            (self.patch_size >= 1 and self.patch_size % 2 == 1, "patch_size must be odd"),
            (self.fv_stride >= 1, "fv_stride must be >= 1"),
            (self.unary_patch >= 1 and self.unary_patch % 2 == 1, "unary_patch must be odd"),
            (self.unary_epochs >= 1, "unary_epochs must be >= 1"),
            (self.unary_max_samples >= 1, "unary_max_samples must be >= 1"),
            (self.crf_iters >= 1, "crf_iters must be >= 1"),
            (self.crf_tol >= 0, "crf_tol must be >= 0"),
            (self.theta_pos > 0 and self.theta_int > 0, "CRF bandwidths must be positive"),
            (len(self.kernel_weights) == 2 and min(self.kernel_weights) >= 0,
             "kernel_weights needs two non-negative values"),
            (self.svm_c > 0, "svm_c must be positive"),
            (self.svm_epochs >= 1, "svm_epochs must be >= 1"),
            (self.class_weighting in ("on", "off", "both"), "class_weighting must be on, off or both"),
            (self.folds >= 2, "folds must be >= 2"),
            (self.min_area >= 1, "min_area must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError("config", msg)
        return self

    def model_params(self):
        d = dataclasses.asdict(self)
        for k in self.NON_MODEL_KEYS:
            d.pop(k)
        d["kernel_weights"] = list(d["kernel_weights"])
        return d

    def kernels(self, channels=1):
        return crf_mod.default_kernels(self.theta_pos, self.theta_int, self.kernel_weights, channels)

    @property
    def fb_params(self):
        return FilterBankParams(self.patch_size, self.fv_stride)


def config_hash(cfg, weighting=None):
    params = cfg.model_params()
    if weighting is not None:
        params["class_weighting"] = weighting
    blob = json.dumps(params, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _coerce(name, raw):
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if name not in fields or name == "NON_MODEL_KEYS":
        raise ConfigError("config", f"unknown key {name!r}")
    default = fields[name].default
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
            return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError("config", f"bad value for {name}: {raw!r}") from exc
    return str(raw)


def parse_config_text(text, base=None):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return dataclasses.replace(base or PipelineConfig(), **values)


def load_config(path=None, overrides=None):
    """Read a ``key=value`` file (optional) and apply non-None overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path) as fh:
                cfg = parse_config_text(fh.read(), cfg)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if overrides:
        cfg = dataclasses.replace(
            cfg, **{k: _coerce(k, v) if isinstance(v, str) else v
                    for k, v in overrides.items() if v is not None}
        )
    return cfg.validate()


def dump_config(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# corpus

@dataclass
class CorpusItem:
    image_id: str
    image: np.ndarray
    labels: np.ndarray                     # merged annotations
    truth: np.ndarray = None               # generator truth, when present
    cache: dict = field(default_factory=dict, repr=False)


def read_manifest(path):
    try:
        with open(path) as fh:
            entries = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError("ingest", f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise DataError("ingest", f"{path}: manifest must be a JSON list")
    return entries


def load_corpus(manifest_path, drop_empty=True):
    root = os.path.dirname(os.path.abspath(manifest_path))
    items = []
    for entry in read_manifest(manifest_path):
        for key in ("image", "annotations"):
            if key not in entry:
                raise DataError("ingest", f"manifest entry without {key!r}: {entry}")
        img_path = os.path.join(root, entry["image"])
        ann_path = os.path.join(root, entry["annotations"])
        if not os.path.exists(ann_path):
            raise DataError("ingest", f"missing annotation file {ann_path}")
        try:
            image = load_image(img_path)
            ann = load_annotations(ann_path)
        except (OSError, ValueError) as exc:
            raise DataError("ingest", f"{exc}") from exc
        h, w = image.shape[:2]
        if (ann.width, ann.height) != (w, h):
            raise DataError("ingest", f"{ann_path}: size {ann.width}x{ann.height} != image {w}x{h}")
        merged = merge_annotations(ann, w, h)
        truth = None
        if "truth" in entry:
            truth = load_labelmap(os.path.join(root, entry["truth"]))
        items.append(CorpusItem(ann.image_id, image, merged, truth))
    return filter_empty(items) if drop_empty else items


def _pixel_feats(cfg, item):
    key = ("pix", cfg.unary_patch)
    if key not in item.cache:
        item.cache[key] = pixel_descriptors(item.image, cfg.unary_patch)
    return item.cache[key]


def _dense(cfg, item):
    key = ("dense", cfg.patch_size, cfg.fv_stride)
    if key not in item.cache:
        item.cache[key] = dense_descriptors(item.image, cfg.fb_params)
    return item.cache[key]


# --------------------------------------------------------------------------
# stages

def fit_pixel_model(cfg, items, weighting):
    feats = np.concatenate([
        _pixel_feats(cfg, it).reshape(it.labels.size, -1) for it in items
    ])
    labels = np.concatenate([it.labels.ravel() for it in items]).astype(np.int64)
    freqs = np.bincount(labels, minlength=N_CLASSES) / len(labels)
    if np.any(freqs == 0):
        missing = [CLASS_NAMES[c] for c in np.flatnonzero(freqs == 0)]
        raise DataError("unary", f"training pixels lack class(es) {missing}")
    cw = class_weights(freqs) if weighting == "on" else np.ones(N_CLASSES)
    model = train_unary(
        feats, labels, cw, n_classes=N_CLASSES, epochs=cfg.unary_epochs, seed=cfg.seed,
        max_samples=cfg.unary_max_samples, patch_size=cfg.unary_patch,
    )
    if not np.all(np.isfinite(model.weights)):
        raise NumericError("unary", "non-finite weights after training")
    return model


def pixel_stage(cfg, unary, item, probs=None):
    """CRF-smoothed MAP labeling for one image."""
    if probs is None:
        probs = unary_probabilities(unary, item.image)
    channels = 1 if item.image.ndim == 2 else item.image.shape[2]
    return crf_mod.smooth(probs, item.image, cfg.kernels(channels), cfg.crf_iters, cfg.crf_tol)


def fit_vocabulary(cfg, items):
    """GMM on standardised training descriptors, mapped back to raw units.

    Normalised Fisher vectors are invariant to per-dimension affine rescaling
    of descriptors, so fitting in standardised space only conditions EM.
    """
    X = np.concatenate([_dense(cfg, it).vectors for it in items]).astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if len(X) > cfg.gmm_max_samples:
        X = X[np.sort(rng.choice(len(X), cfg.gmm_max_samples, replace=False))]
    if len(X) < cfg.gmm_k:
        raise DataError("gmm", f"{len(X)} descriptors for K={cfg.gmm_k}")
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    m = fit_gmm((X - shift) / scale, cfg.gmm_k, seed=cfg.seed,
                max_iters=cfg.gmm_max_iters, tol=cfg.gmm_tol)
    out = GmmModel(m.alpha, m.mu * scale + shift, m.sigma * scale, trace=m.trace)
    if not (np.all(np.isfinite(out.mu)) and np.all(np.isfinite(out.sigma))):
        raise NumericError("gmm", "non-finite parameters")
    return out


def encode_segments(cfg, gmm, item, segments):
    """Fisher vectors for encodable segments; flags the rest."""
    ds = _dense(cfg, item)
    fvs = []
    for seg in segments:
        try:
            fvs.append(fisher_encode(gmm, ds, seg.mask))
        except UnencodableSegmentError:
            seg.unencodable = True
            fvs.append(None)
    return fvs


def training_segments(cfg, unary, gmm, items):
    X, y = [], []
    for it in items:
        lm = pixel_stage(cfg, unary, it)
        segs = extract_segments(lm, cfg.min_area)
        for seg, fv in zip(segs, encode_segments(cfg, gmm, it, segs)):
            if fv is None:
                continue
            X.append(fv)
            y.append(assign_gt_label(seg, it.labels))
    return X, y


@dataclass
class Models:
    unary: object
    gmm: GmmModel
    svm: object


def train_models(cfg, items, weighting=None, gmm=None):
    weighting = weighting or cfg.class_weighting
    if weighting not in ("on", "off"):
        raise ConfigError("train", "class_weighting must be on or off for training")
    if not items:
        raise DataError("ingest", "no non-empty training scenes")
    unary = fit_pixel_model(cfg, items, weighting)
    gmm = fit_vocabulary(cfg, items) if gmm is None else gmm
    X, y = training_segments(cfg, unary, gmm, items)
    if len(set(y)) < 2:
        raise DataError("svm", f"segment labels {sorted(set(y))} span fewer than two classes")
    svm = train_ova_svm(np.array(X), np.array(y), C=cfg.svm_c, epochs=cfg.svm_epochs)
    return Models(unary, gmm, svm)


@dataclass
class InferenceResult:
    pixel_labels: np.ndarray
    labels: np.ndarray
    segments: list
    overlay: np.ndarray = None


def infer_item(cfg, models, item, probs=None):
    lm = pixel_stage(cfg, models.unary, item, probs)
    segs = extract_segments(lm, cfg.min_area)
    fvs = encode_segments(cfg, models.gmm, item, segs)
    ok = [i for i, fv in enumerate(fvs) if fv is not None]
    if ok:
        pred = predict_many(models.svm, np.array([fvs[i] for i in ok]))
        for i, c in zip(ok, pred):
            segs[i].predicted_class = int(c)
    for s in segs:
        if s.unencodable:
            log.warning("%s: segment %d unencodable, keeping pixel-stage class", item.image_id, s.id)
    return InferenceResult(lm, relabel(lm.shape, segs), segs)


def render_overlay(image, labels):
    gray = image if image.ndim == 2 else image.mean(axis=2)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    color = OVERLAY_COLORS[labels]
    fg = (labels != BACKGROUND)[:, :, None]
    return np.where(fg, 0.5 * rgb + 0.5 * color, rgb)


# --------------------------------------------------------------------------
# artifacts

def _sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def save_models(cfg, models, model_dir=None):
    """Write the three model files plus a metadata file holding the config hash."""
    model_dir = model_dir or cfg.model_dir
    os.makedirs(model_dir, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=model_dir)
    try:
        write_unary(models.unary, os.path.join(tmp, ARTIFACTS["unary"]))
        write_gmm(models.gmm, os.path.join(tmp, ARTIFACTS["gmm"]))
        write_svm(models.svm, os.path.join(tmp, ARTIFACTS["svm"]))
        files = {}
        for name in ARTIFACTS.values():
            with open(os.path.join(tmp, name), "rb") as fh:
                files[name] = _sha256_bytes(fh.read())
        meta = {"config_hash": config_hash(cfg), "config": cfg.model_params(), "files": files}
        with open(os.path.join(tmp, META_FILE), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")
        for name in list(ARTIFACTS.values()) + [META_FILE]:
            os.replace(os.path.join(tmp, name), os.path.join(model_dir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return {k: os.path.join(model_dir, v) for k, v in ARTIFACTS.items()}


def load_models(cfg, model_dir=None):
    model_dir = model_dir or cfg.model_dir
    meta_path = os.path.join(model_dir, META_FILE)
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError("load", f"cannot read {meta_path}: {exc}") from exc
    if meta.get("config_hash") != config_hash(cfg):
        raise ConfigError("load", f"models in {model_dir} were trained with a different configuration")
    paths = {k: os.path.join(model_dir, v) for k, v in ARTIFACTS.items()}
    for name, path in paths.items():
        if not os.path.exists(path):
            raise DataError("load", f"missing model file {path}")
        with open(path, "rb") as fh:
            if _sha256_bytes(fh.read()) != meta["files"].get(ARTIFACTS[name]):
                raise DataError("load", f"{path} does not match its recorded hash")
    try:
        return Models(read_unary(paths["unary"]), read_gmm(paths["gmm"]), read_svm(paths["svm"]))
    except ValueError as exc:
        raise DataError("load", str(exc)) from exc


def run_training(cfg):
    """Train on every non-empty scene in the manifest and persist the models."""
    items = load_corpus(cfg.manifest)
    models = train_models(cfg, items)
    return save_models(cfg, models)


def run_inference(cfg, image, models=None, probabilities=None, image_id="image"):
    """Segments of ``image`` relabelled by the segment classifier, plus an overlay.

    ``probabilities`` (path to a probability field or an ``(H, W, C)`` array)
    replaces the pixel model's output.
    """
    models = models or load_models(cfg)
    if isinstance(image, (str, os.PathLike)):
        image = load_image(image)
    probs = probabilities
    if isinstance(probs, (str, os.PathLike)):
        probs = read_probabilities(probs)
    if probs is not None and probs.shape[:2] != image.shape[:2]:
        raise DataError("infer", "probability field does not match image size")
    item = CorpusItem(image_id, image, np.zeros(image.shape[:2], dtype=np.uint8))
    res = infer_item(cfg, models, item, probs)
    res.overlay = render_overlay(image, res.labels)
    return res


# --------------------------------------------------------------------------
# evaluation

def fv_baseline(cfg, gmm, train_items, test_items):
    """Standalone segment classifier on ground-truth regions (three classes)."""

    def encode(items):
        X, y = [], []
        for it in items:
            segs = segments_from_truth(it.labels)
            for s, fv in zip(segs, encode_segments(cfg, gmm, it, segs)):
                if fv is not None:
                    X.append(fv)
                    y.append(s.gt_class)
        return np.array(X), np.array(y)

    Xtr, ytr = encode(train_items)
    Xte, yte = encode(test_items)
    if len(set(ytr.tolist())) < 2 or len(yte) == 0:
        return ev.UNDEFINED, ev.confusion_matrix([], [], ev.DAMAGE_CLASSES)
    model = train_ova_svm(Xtr, ytr, C=cfg.svm_c, epochs=cfg.svm_epochs)
    pred = predict_many(model, Xte)
    cm = ev.confusion_matrix(yte, pred, ev.DAMAGE_CLASSES)
    return 100.0 * float(np.mean(pred == yte)), cm


def evaluate_maps(gts, preds):
    cm = ev.confusion_matrix(
        np.concatenate([g.ravel() for g in gts]), np.concatenate([p.ravel() for p in preds])
    )
    return {
        "mean_accuracy": ev.mean_pixel_accuracy(gts, preds),
        "global_accuracy": ev.global_pixel_accuracy(gts, preds),
        "confusion": cm,
        "precision_recall": ev.precision_recall(cm),
    }


def segment_accuracy(items, results):
    """Percent of output segments whose class equals their max-overlap truth."""
    hits = [assign_gt_label(s, it.labels) == s.predicted_class
            for it, r in zip(items, results) for s in r.segments]
    return 100.0 * float(np.mean(hits)) if hits else None


def _summarize(vals):
    """CV summary of the defined fold values; one fold leaves the error undefined."""
    defined = [v for v in vals if v is not None]
    if not defined:
        return None
    if len(defined) == 1:
        return {"folds": defined, "mean": defined[0], "stderr": None}
    return ev.cv_aggregate(defined).to_json()


def _pr_json(cms):
    """Per damage class, CV summaries of precision and recall across folds."""
    out = {}
    for c in ev.DAMAGE_CLASSES:
        per = {"precision": [], "recall": []}
        for cm in cms:
            p, r = ev.precision_recall(cm)[c]
            per["precision"].append(None if p is None else 100 * p)
            per["recall"].append(None if r is None else 100 * r)
        out[CLASS_NAMES[c]] = {key: _summarize(vals) for key, vals in per.items()}
    return out


def _sum_cms(cms, classes):
    total = sum((cm.counts for cm in cms), np.zeros((len(classes), len(classes)), dtype=np.int64))
    return ev.ConfusionMatrix(total, classes)


def _fold_has_all_classes(items):
    present = set()
    for it in items:
        present.update(np.unique(it.labels).tolist())
    return present >= set(range(N_CLASSES))


def run_cv(cfg, items=None):
    """k-fold report: segmentation X, FV baseline Y, X*Y and the combined pipeline."""
    items = load_corpus(cfg.manifest) if items is None else items
    folds = make_folds(len(items), cfg.folds, cfg.seed)
    weightings = ("on", "off") if cfg.class_weighting == "both" else (cfg.class_weighting,)
    per_run = {w: {"X": [], "Y": [], "XY": [], "combined": [], "global": [], "segments": [],
                   "seg_cms": [], "comb_cms": [], "fv_cms": []} for w in weightings}
    skipped = []
    for f in range(folds.k):
        train = [items[i] for i in folds.train_indices(f)]
        test = [items[i] for i in folds.test_indices(f)]
        if not _fold_has_all_classes(train):
            log.warning("fold %d skipped: training scenes miss a class", f)
            skipped.append(f)
            continue
        gmm = fit_vocabulary(cfg, train)
        y_acc, fv_cm = fv_baseline(cfg, gmm, train, test)
        for w in weightings:
            models = train_models(cfg, train, w, gmm=gmm)
            results = [infer_item(cfg, models, it) for it in test]
            gts = [it.labels for it in test]
            seg = evaluate_maps(gts, [r.pixel_labels for r in results])
            comb = evaluate_maps(gts, [r.labels for r in results])
            acc = per_run[w]
            acc["X"].append(seg["mean_accuracy"])
            acc["Y"].append(y_acc)
            acc["XY"].append(
                ev.hypothesis_product(seg["mean_accuracy"], y_acc)
                if seg["mean_accuracy"] is not None and y_acc is not None else None
            )
            acc["combined"].append(comb["mean_accuracy"])
            acc["global"].append(comb["global_accuracy"])
            acc["segments"].append(segment_accuracy(test, results))
            acc["seg_cms"].append(seg["confusion"])
            acc["comb_cms"].append(comb["confusion"])
            acc["fv_cms"].append(fv_cm)

    runs = {}
    for w, acc in per_run.items():
        name = "weighted" if w == "on" else "unweighted"
        runs[name] = {
            "segmentation_X": _summarize(acc["X"]),
            "fv_Y": _summarize(acc["Y"]),
            "hypothesis_XY": _summarize(acc["XY"]),
            "combined": _summarize(acc["combined"]),
            "combined_global_pixel_accuracy": _summarize(acc["global"]),
            "combined_segment_accuracy": _summarize(acc["segments"]),
            "precision_recall": {
                "segmentation": _pr_json(acc["seg_cms"]),
                "combined": _pr_json(acc["comb_cms"]),
            },
            "confusion": {
                "fv": _sum_cms(acc["fv_cms"], ev.DAMAGE_CLASSES).to_json(),
                "segmentation": _sum_cms(acc["seg_cms"], tuple(range(N_CLASSES))).to_json(),
                "combined": _sum_cms(acc["comb_cms"], tuple(range(N_CLASSES))).to_json(),
            },
        }
    return {
        "config_hash": config_hash(cfg),
        "folds": folds.k,
        "n_scenes": len(items),
        "skipped_folds": skipped,
        "runs": runs,
    }


def report_json(report):
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def _cell(summary):
    if summary is None:
        return ev.UNDEFINED_TEXT
    if summary["stderr"] is None:
        return f"{summary['mean']:.2f}"
    return f"{summary['mean']:.2f}±{summary['stderr']:.2f}"


def report_table(report):
    """Human-readable rendering in the layout of the comparison tables."""
    out = [f"{report['folds']}-fold cross-validation over {report['n_scenes']} scenes"]
    if report["skipped_folds"]:
        out.append(f"skipped folds: {report['skipped_folds']}")
    rows = []
    for name, run in report["runs"].items():
        label = "3-classes*" if name == "weighted" else "3-classes"
        rows.append([label, _cell(run["segmentation_X"]), _cell(run["fv_Y"]),
                     _cell(run["hypothesis_XY"]), _cell(run["combined"])])
    out.append(ev.render_table(
        ["Damage levels", "Segmentation (X)", "FV (Y)", "Hypothesis (X*Y)", "Combined"], rows))
    for name, run in report["runs"].items():
        for stage in ("segmentation", "combined"):
            out.append("")
            out.append(f"Precision / recall, {stage} ({name})")
            pr_rows = []
            for cls, entry in run["precision_recall"][stage].items():
                pr_rows.append([cls.capitalize(), _cell(entry["precision"]), _cell(entry["recall"])])
            out.append(ev.render_table(["Class", "Precision", "Recall"], pr_rows))
        fv = run["confusion"]["fv"]
        classes = tuple(CLASS_NAMES.index(c) for c in fv["classes"])
        out.append("")
        out.append(f"FV confusion, row % ({name})")
        out.append(ev.render_confusion(ev.ConfusionMatrix(np.array(fv["counts"]), classes)))
    return "\n".join(out) + "\n"
