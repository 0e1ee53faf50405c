"""Training and evaluation workflows wiring the library modules together.

These functions are the single implementation behind both the command-line
interface and the end-to-end verification suite, so CLI results and
library results are identical by construction.
"""

from __future__ import annotations

import numpy as np

from . import classifiers as cls
from . import cloud as pc
from . import evaluate as ev
from . import features as ft
from . import minicnn as mc
from . import pipeline as pl
from . import scenegen as sg
from .errors import DegenerateTraining, EmptyProjection, NoPepperFound, RoiOutOfImage


# ---------------------------------------------------------------------------
# model training
# ---------------------------------------------------------------------------


def train_nb_from_scenes(scenes, cap_per_scene: int = 4000, seed: int = 0) -> cls.NaiveBayesHsv:
    """Fit the pepper HSV model from labeled scene clouds.

    The non-pepper class is sampled half from saturated material (foliage,
    peduncles) and half from the dull background, otherwise the abundant
    background pixels would dominate the class and leave green plant matter
    closer to the pepper model than to its own.
    """

    def _sample(rng, rows, cap):
        if rows.size > cap:
            return np.sort(rng.choice(rows, cap, replace=False))
        return rows

    rng = np.random.default_rng(seed)
    pepper, other = [], []
    for scene in scenes:
        labs = scene.cloud.labels
        hsv = ft.rgb_to_hsv_array(scene.cloud.colors)
        pepper.append(hsv[_sample(rng, np.flatnonzero(labs == pc.LABEL_PEPPER), cap_per_scene)])
        non = labs != pc.LABEL_PEPPER
        saturated = non & (hsv[:, 1] >= 0.35)
        other.append(hsv[_sample(rng, np.flatnonzero(saturated), cap_per_scene // 2)])
        other.append(hsv[_sample(rng, np.flatnonzero(non & ~saturated), cap_per_scene // 2)])
    if not pepper or not other:
        raise DegenerateTraining("scenes supply no pepper/non-pepper samples")
    return cls.nb_fit(np.vstack(pepper), np.vstack(other))


def extract_scene_features(
    scene, normal_k: int = 30, fpfh_k: int = 30
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point 36-D descriptors for a whole scene cloud.

    Returns (features, labels, valid) where labels are the cloud labels and
    valid flags points with usable normals and histograms.
    """
    cloud = scene.cloud
    normals, n_valid = pc.estimate_normals(cloud, normal_k, (0.0, 0.0, 0.0))
    hists, h_valid = ft.fpfh(cloud, normals, fpfh_k, n_valid)
    feats = ft.assemble_features(ft.rgb_to_hsv_array(cloud.colors), hists)
    return feats, cloud.labels, n_valid & h_valid


def collect_svm_training(
    scenes,
    normal_k: int = 30,
    fpfh_k: int = 30,
    per_scene: int = 300,
    max_total: int = 2000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced (features, +-1 labels) sample across training scenes."""
    rng = np.random.default_rng(seed)
    feats_all, y_all = [], []
    for scene in scenes:
        feats, labels, valid = extract_scene_features(scene, normal_k, fpfh_k)
        pos = np.flatnonzero((labels == pc.LABEL_PEDUNCLE) & valid)
        neg = np.flatnonzero((labels != pc.LABEL_PEDUNCLE) & (labels != pc.LABEL_UNLABELED) & valid)
        half = per_scene // 2
        if pos.size > half:
            pos = np.sort(rng.choice(pos, half, replace=False))
        if neg.size > half:
            neg = np.sort(rng.choice(neg, half, replace=False))
        feats_all.append(feats[pos])
        y_all.append(np.ones(pos.size))
        feats_all.append(feats[neg])
        y_all.append(-np.ones(neg.size))
    feats = np.vstack(feats_all)
    y = np.concatenate(y_all)
    if len(y) > max_total:
        keep = np.sort(rng.choice(len(y), max_total, replace=False))
        feats, y = feats[keep], y[keep]
    if not (y > 0).any() or not (y < 0).any():
        raise DegenerateTraining("training sample lost one of the classes")
    return feats, y


def sample_training_patches(
    scenes, patch_hw: tuple[int, int], per_scene: int = 30, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (patches (N, 3, ph, pw) in [0, 1], labels {0, 1}) from the
    annotated positive / negative masks; unannotated pixels are never used.

    Half of each scene's negatives are drawn from saturated (plant-like)
    material when available, so the scorer sees the hard green-on-green
    cases and not just flat background.
    """
    ph, pw = patch_hw
    rng = np.random.default_rng(seed)
    patches, labels = [], []
    for scene in scenes:
        h, w = scene.pos_mask.shape
        valid = np.zeros((h, w), dtype=bool)
        valid[ph // 2 : h - (ph - ph // 2) + 1, pw // 2 : w - (pw - pw // 2) + 1] = True
        imgf = scene.rgb.astype(np.float64) / 255.0
        half = per_scene // 2

        def crop(cy, cx):
            patch = imgf[cy - ph // 2 : cy - ph // 2 + ph, cx - pw // 2 : cx - pw // 2 + pw]
            patches.append(patch.transpose(2, 0, 1))

        vv, uu = np.nonzero(scene.pos_mask & valid)
        take = min(half, vv.size)
        if take:
            sel = rng.choice(vv.size, take, replace=False)
            for cy, cx in zip(vv[sel], uu[sel]):
                crop(cy, cx)
                labels.append(1)

        hsv = ft.rgb_to_hsv_array(scene.rgb.reshape(-1, 3)).reshape(h, w, 3)
        saturated = hsv[:, :, 1] >= 0.35
        neg_hard = scene.neg_mask & valid & saturated
        neg_easy = scene.neg_mask & valid & ~saturated
        budget = half
        for mask in (neg_hard, neg_easy):
            vv, uu = np.nonzero(mask)
            take = min(budget if mask is neg_easy else (half + 1) // 2, vv.size)
            if take == 0:
                continue
            sel = rng.choice(vv.size, take, replace=False)
            for cy, cx in zip(vv[sel], uu[sel]):
                crop(cy, cx)
                labels.append(0)
            budget -= take
            if budget <= 0:
                break
    if not patches:
        raise DegenerateTraining("no annotated patch centers available")
    return np.stack(patches), np.asarray(labels, dtype=np.intp)


def train_cnn_from_scenes(
    scenes,
    spec: mc.NetworkSpec,
    epochs: int = 6,
    batch: int = 16,
    lr: float = 0.02,
    lr_decay: float = 1.0,
    per_scene: int = 30,
    seed: int = 0,
    log=None,
) -> mc.Network:
    net = mc.Network.from_netspec(spec, seed=seed)
    patches, labels = sample_training_patches(scenes, (spec.input_h, spec.input_w), per_scene, seed)
    if log is not None:
        log(f"training on {len(labels)} patches ({int(labels.sum())} positive)")
    mc.train_network(
        net, patches, labels, epochs=epochs, batch=batch, lr=lr, lr_decay=lr_decay,
        seed=seed, log=log,
    )
    return net


# ---------------------------------------------------------------------------
# per-scene scoring and evaluation
# ---------------------------------------------------------------------------


def score_scene(
    scene,
    detector,
    nb: cls.NaiveBayesHsv,
    pepper_params: pl.PepperDetectParams = pl.PepperDetectParams(),
) -> ev.SceneEval:
    """Detect the pepper, score the region of interest, attach truth labels.

    Scenes where no pepper is found (or the ROI leaves the image) yield an
    all-miss record: their ground-truth peduncle points count as false
    negatives at every threshold.
    """
    frame = scene.frame
    try:
        pepper_idx, _ = pl.detect_pepper(frame.cloud, nb, pepper_params)
        roi = pl.compute_roi(pl.pixel_bbox(frame.pixels[pepper_idx]), *frame.depth_raw.shape[::-1])
        scored = detector.score_frame(frame, roi)
        if len(scored) == 0:
            raise EmptyProjection("region of interest produced no scored points")
    except (NoPepperFound, RoiOutOfImage, EmptyProjection):
        n_pos = int(np.sum(frame.cloud.labels == pc.LABEL_PEDUNCLE))
        empty = pl.ScoredCloud(
            pc.PointCloud(np.zeros((n_pos, 3)) + [0.0, 0.0, 1.0]),
            np.zeros(n_pos),
        )
        return ev.SceneEval(empty, None, np.full(n_pos, ev.POSITIVE, dtype=np.int64))
    labels = ev.labels_to_eval(scored.cloud.labels)
    return ev.SceneEval(scored, frame.cloud.points[pepper_idx], labels)


def pooled_raw_curve(scene_evals, thresholds=None) -> ev.PrCurve:
    """Raw (pre-filter) curve over the pooled scored points of all scenes."""
    scores = np.concatenate([s.scored.scores for s in scene_evals])
    labels = np.concatenate([s.eval_labels for s in scene_evals])
    return ev.pr_curve(scores, labels, thresholds, mode="raw")


def evaluate_detector(
    scenes,
    detector,
    nb: cls.NaiveBayesHsv,
    thresholds=None,
    fp: pl.FilterParams = pl.FilterParams(),
    box_params: pl.PeduncleBoxParams = pl.PeduncleBoxParams(),
    up: tuple[int, int] = pl.UP_DEFAULT,
    pepper_params: pl.PepperDetectParams = pl.PepperDetectParams(),
    log=None,
):
    """Score every scene once, then form raw and filtered curves.

    Returns (raw_curve, filtered_curve, notes).
    """
    scene_evals = []
    for i, scene in enumerate(scenes):
        scene_evals.append(score_scene(scene, detector, nb, pepper_params))
        if log is not None and (i + 1) % 25 == 0:
            log(f"scored {i + 1} scenes")
    raw = pooled_raw_curve(scene_evals, thresholds)
    filtered, notes = ev.eval_filtered(scene_evals, nb, thresholds, fp, box_params, up)
    return raw, filtered, notes


# ---------------------------------------------------------------------------
# the standard desk-scale benchmark
# ---------------------------------------------------------------------------


def run_benchmark(
    master_seed: int = 20240,
    n_scenes: int = 200,
    n_train: int = 40,
    n_thresholds: int = 26,
    cnn_epochs: int = 8,
    cnn_lr: float = 0.03,
    cnn_lr_decay: float = 0.85,
    cnn_patches_per_scene: int = 24,
    seed: int = 0,
    log=None,
) -> dict:
    """Train and evaluate both detectors on the fixed-seed synthetic set.

    The CNN is trained twice: on the full training split and on its first
    half, to measure the effect of doubling the training scenes. Evaluation
    scenes are regenerated on the fly to bound memory.

    Returns curves keyed by detector ('pfh-svm', 'cnn', 'cnn-half'), each a
    {'raw': PrCurve, 'filtered': PrCurve} pair, plus the trained models.
    """
    from importlib import resources

    from . import minicnn as mc_mod

    def say(msg):
        if log is not None:
            log(msg)

    params = sg.benchmark_params(n_scenes, master_seed, sg.benchmark_base())
    train_params, eval_params = params[:n_train], params[n_train:]
    thresholds = ev.default_thresholds(n_thresholds)

    say(f"generating {n_train} training scenes")
    train_scenes = [sg.generate(p) for p in train_params]

    say("fitting the pepper color model")
    nb = train_nb_from_scenes(train_scenes, seed=seed)

    say("extracting geometry features for the margin classifier")
    feats, y = collect_svm_training(train_scenes, per_scene=300, max_total=2000, seed=seed)
    svm = cls.svm_train(feats, y, cls.SvmParams(seed=seed))
    say(f"svm trained on {len(y)} rows, {len(svm.dual_coefs)} support vectors")

    spec = mc_mod.parse_netspec(
        resources.files("peduncle").joinpath("data/default_net.spec").read_text()
    )
    say("training the patch scorer on the full training split")
    cnn_full = train_cnn_from_scenes(
        train_scenes, spec, epochs=cnn_epochs, lr=cnn_lr, lr_decay=cnn_lr_decay,
        per_scene=cnn_patches_per_scene, seed=seed, log=log,
    )
    say("training the patch scorer on half the training split")
    cnn_half = train_cnn_from_scenes(
        train_scenes[: n_train // 2], spec, epochs=cnn_epochs, lr=cnn_lr, lr_decay=cnn_lr_decay,
        per_scene=cnn_patches_per_scene, seed=seed, log=log,
    )
    del train_scenes

    detectors = {
        "pfh-svm": pl.PfhSvmDetector(svm),
        "cnn": pl.CnnDetector(cnn_full),
        "cnn-half": pl.CnnDetector(cnn_half),
    }
    results = {"models": {"nb": nb, "svm": svm, "cnn": cnn_full, "cnn-half": cnn_half}}
    for name, detector in detectors.items():
        say(f"evaluating {name} on {len(eval_params)} scenes")
        raw, filtered, notes = evaluate_detector(
            (sg.generate(p) for p in eval_params), detector, nb, thresholds, log=log
        )
        results[name] = {"raw": raw, "filtered": filtered, "notes": notes}
        say(
            f"{name}: raw best F1 {raw.best.f1:.3f} @ {raw.best.threshold:.2f}, "
            f"filtered best F1 {filtered.best.f1:.3f} @ {filtered.best.threshold:.2f}"
        )
    return results
