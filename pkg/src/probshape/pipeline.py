"""End-to-end orchestration: dataset, training stages, estimation, eval.

The desk-scale dataset is a small family of procedural objects (boxes, cups
with and without handles, L-solids, spheres) posed by similarity transforms
in a loosely canonical frame: cups open along +y and only the azimuth is
randomized. Held-out views are chosen to be ambiguous on purpose (boxes seen
face-on so depth is hidden, cup handles occluded behind the body).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .camera import Camera, Sim3Transform, look_at_camera, rotation_about_axis
from .conditioning import ortho_norf
from .config import RunConfig
from .denoisers import (
    ConvDenoiser,
    load_training_state,
    save_training_state,
    train_denoiser,
)
from .diffusion import NoiseSchedule, dpm_solver_pp_sample
from .errors import InsufficientEvidenceError, RegistrationFailedError, UsageError
from .metrics import chamfer_l1, fscore, scene_aggregate
from .nn import Adam, load_mlp, save_mlp
from .ply import load_ply, save_ply
from .registration import (
    CorrespondenceSet,
    back_project,
    ransac_register,
    registration_report,
    select_hypothesis,
)
from .render import (
    NorfMap,
    Observation,
    load_norf_map,
    load_observation,
    render_norf,
    render_observation,
    save_norf_map,
    save_observation,
)
from .shapes import (
    BoxShape,
    CupShape,
    EllShape,
    SphereShape,
    normalize_to_unit_cube,
    sample_sdf_points,
    surface_points,
)
from .surface import extract_surface
from .triplane import (
    FieldLibrary,
    SdfSampleSet,
    compute_ref_std,
    denormalize_triplane,
    fit_triplanes,
    from_image_layout,
    load_triplane,
    normalize_triplane,
    save_triplane,
    to_image_layout,
)

CAMERA_DISTANCE = 1.0
UP = np.array([0.0, 1.0, 0.0])


# -- procedural objects ----------------------------------------------------


def make_shape(family, rng):
    """Sample one shape of the family; returns (base_shape, params)."""
    if family == "box":
        # similar frontal footprint, varied hidden depth
        w = rng.uniform(0.42, 0.5)
        h = rng.uniform(0.42, 0.5)
        d = rng.uniform(0.12, 0.5)
        params = {"half_extents": [w / 2, h / 2, d / 2]}
        return BoxShape(np.array(params["half_extents"])), params
    if family in ("cup", "cup-handle"):
        params = {
            "outer_radius": float(rng.uniform(0.28, 0.38)),
            "height": float(rng.uniform(0.7, 0.95)),
            "wall": float(rng.uniform(0.06, 0.09)),
            "with_handle": family == "cup-handle",
        }
        return CupShape(**params), params
    if family == "ell":
        params = {
            "leg": float(rng.uniform(0.45, 0.6)),
            "thickness": float(rng.uniform(0.18, 0.26)),
            "depth": float(rng.uniform(0.2, 0.4)),
        }
        return EllShape(**params), params
    if family == "sphere":
        params = {"radius": float(rng.uniform(0.3, 0.5))}
        return SphereShape(**params), params
    raise UsageError(f"unknown shape family {family!r}")


def shape_from_params(family, params):
    if family == "box":
        return BoxShape(np.array(params["half_extents"]))
    if family in ("cup", "cup-handle"):
        return CupShape(**params)
    if family == "ell":
        return EllShape(**params)
    if family == "sphere":
        return SphereShape(**params)
    raise UsageError(f"unknown shape family {family!r}")


def make_pose(rng, scale_range):
    """Loosely canonical placement: y-axis azimuth only, small offset."""
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    rot = rotation_about_axis(UP, azimuth)
    scale = rng.uniform(*scale_range)
    trans = rng.uniform(-0.05, 0.05, size=3)
    return Sim3Transform(rotation=rot, translation=trans, scale=scale)


def _camera_at(pose, azimuth, elevation, fov_deg, resolution):
    """Camera on a sphere around the object center, looking at it."""
    direction = np.array(
        [
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
            np.cos(elevation) * np.cos(azimuth),
        ]
    )
    eye = pose.translation + CAMERA_DISTANCE * direction
    return eye, look_at_camera(eye, pose.translation, UP, fov_deg, resolution)


def _object_azimuth(pose, direction_obj):
    """World azimuth of an object-frame direction (projected to the ground)."""
    d = pose.rotation @ np.asarray(direction_obj, dtype=np.float64)
    return float(np.arctan2(d[0], d[2]))


def holdout_view_angles(family, pose, rng):
    """(azimuth, elevation) of a deliberately ambiguous viewpoint."""
    jitter = rng.uniform(-0.12, 0.12)
    elevation = rng.uniform(0.05, 0.3)
    if family == "box":
        # face-on along the object z axis: the depth extent is foreshortened
        return _object_azimuth(pose, [0.0, 0.0, 1.0]) + jitter, elevation
    if family == "cup-handle":
        # handle sits on +x; view from -x so the body occludes it
        return _object_azimuth(pose, [-1.0, 0.0, 0.0]) + jitter, elevation
    return rng.uniform(0.0, 2.0 * np.pi), rng.uniform(-0.3, 0.5)


# -- dataset ---------------------------------------------------------------


def _view_paths(obj_dir, tag):
    return obj_dir / f"{tag}_norf", obj_dir / f"{tag}_obs"


def generate_dataset(cfg: RunConfig, log=print):
    """Render the full training corpus and write it under output_dir."""
    ds = cfg.dataset
    root = cfg.dataset_dir
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 1])
    objects = []
    for i in range(ds.objects):
        family = ds.families[i % len(ds.families)]
        base, params = make_shape(family, rng)
        shape = normalize_to_unit_cube(base)
        pose = make_pose(rng, ds.scale_range)
        obj_dir = root / f"obj_{i:03d}"
        obj_dir.mkdir(exist_ok=True)
        samples = sample_sdf_points(
            shape, ds.supervision_points, ds.uniform_mix, rng
        )
        np.savez(
            obj_dir / "samples.npz", points=samples.points, distances=samples.distances
        )
        views = []
        for j in range(ds.views_per_object + ds.holdout_views):
            held_out = j >= ds.views_per_object
            if held_out:
                az, el = holdout_view_angles(family, pose, rng)
            else:
                az = rng.uniform(0.0, 2.0 * np.pi)
                el = rng.uniform(-0.3, 0.5)
            eye, cam = _camera_at(pose, az, el, ds.fov_deg, ds.resolution)
            # headlight: illuminate from the camera so visible faces are lit
            light = eye - pose.translation
            m = render_norf(shape, cam, pose)
            obs = render_observation(shape, cam, light, pose)
            tag = f"hold_{j - ds.views_per_object:02d}" if held_out else f"view_{j:02d}"
            norf_path, obs_path = _view_paths(obj_dir, tag)
            save_norf_map(norf_path, m, cam)
            save_observation(obs_path, obs)
            views.append(
                {
                    "tag": tag,
                    "held_out": held_out,
                    "camera": cam.to_dict(),
                    "pixels_on": int(m.mask.sum()),
                }
            )
        objects.append(
            {
                "id": f"obj_{i:03d}",
                "family": family,
                "params": params,
                "pose": pose.to_dict(),
                "views": views,
            }
        )
        log(f"  {objects[-1]['id']} [{family}]: {len(views)} views")
    manifest = {
        "seed": cfg.seed,
        "resolution": ds.resolution,
        "objects": objects,
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_manifest(cfg: RunConfig):
    path = cfg.dataset_dir / "manifest.json"
    if not path.exists():
        raise UsageError(f"no dataset manifest at {path}; run gen-dataset first")
    with open(path) as f:
        return json.load(f)


def load_view(cfg: RunConfig, obj_id, tag):
    """(NorfMap, Camera, Observation) for one stored view."""
    obj_dir = cfg.dataset_dir / obj_id
    norf_path, obs_path = _view_paths(obj_dir, tag)
    m, cam = load_norf_map(norf_path)
    obs = load_observation(obs_path)
    return m, cam, obs


def _write_loss_csv(path, history, start=0):
    exists = path.exists() and start > 0
    with open(path, "a" if exists else "w", newline="") as f:
        w = csv.writer(f)
        if not exists:
            w.writerow(["step", "loss"])
        for i, v in enumerate(history, start=start):
            w.writerow([i, f"{v:.6f}"])


# -- triplane library stage ------------------------------------------------


def fit_library(cfg: RunConfig, log=print):
    """Fit per-object triplanes plus the shared decoder; persist both."""
    manifest = load_manifest(cfg)
    tp = cfg.triplane
    samples = []
    for obj in manifest["objects"]:
        data = np.load(cfg.dataset_dir / obj["id"] / "samples.npz")
        samples.append(SdfSampleSet(points=data["points"], distances=data["distances"]))
    widths = tp.decoder_widths or (3 * tp.n, 128, 128, 1)
    lib = fit_triplanes(
        samples,
        tp.train,
        alpha_tv=tp.alpha_tv,
        p=tp.p,
        n=tp.n,
        decoder_widths=widths,
        points_per_epoch=tp.points_per_epoch,
        callback=lambda e, v: log(f"  epoch {e}: loss {v:.5f}")
        if e % max(1, tp.train.total_steps // 10) == 0
        else None,
    )
    ref_std = compute_ref_std(lib.triplanes)
    ck = cfg.checkpoint_dir
    ck.mkdir(parents=True, exist_ok=True)
    save_mlp(ck / "decoder.nnc", lib.decoder)
    for obj, z in zip(manifest["objects"], lib.triplanes):
        save_triplane(ck / f"{obj['id']}.tpl", z, ref_std)
    _write_loss_csv(ck / "loss_triplane.csv", lib.loss_history)
    log(f"  final fitting loss {lib.final_loss:.5f}")
    return lib, ref_std


def load_library(cfg: RunConfig):
    manifest = load_manifest(cfg)
    ck = cfg.checkpoint_dir
    decoder_path = ck / "decoder.nnc"
    if not decoder_path.exists():
        raise UsageError(f"no decoder at {decoder_path}; run fit-triplanes first")
    decoder = load_mlp(decoder_path)
    triplanes = []
    ref_std = None
    for obj in manifest["objects"]:
        z, ref = load_triplane(ck / f"{obj['id']}.tpl")
        triplanes.append(z)
        ref_std = ref
    return FieldLibrary(triplanes=triplanes, decoder=decoder, ref_std=ref_std), ref_std


# -- denoiser training stages ----------------------------------------------


def _schedule(cfg: RunConfig):
    d = cfg.diffusion
    return NoiseSchedule(T=d.T, beta_start=d.beta_start, beta_end=d.beta_end)


def _stage_training_data(cfg: RunConfig, stage):
    """(states, conds) arrays for one stage, both (N, C, H, W)."""
    manifest = load_manifest(cfg)
    states, conds = [], []
    if stage == "norf":
        for obj in manifest["objects"]:
            for view in obj["views"]:
                if view["held_out"]:
                    continue
                m, _, obs = load_view(cfg, obj["id"], view["tag"])
                states.append(m.to_state())
                conds.append(obs.conditioning())
    elif stage == "shape":
        lib, ref_std = load_library(cfg)
        for obj, z in zip(manifest["objects"], lib.triplanes):
            img = to_image_layout(normalize_triplane(z, ref_std))
            state = img.transpose(2, 0, 1)
            for view in obj["views"]:
                if view["held_out"]:
                    continue
                m, _, _ = load_view(cfg, obj["id"], view["tag"])
                cond = ortho_norf(m, cfg.triplane.p).transpose(2, 0, 1)
                states.append(state)
                conds.append(cond)
    else:
        raise UsageError(f"unknown stage {stage!r}")
    return np.array(states), np.array(conds)


def train_stage(cfg: RunConfig, stage, log=print, checkpoint_every=200):
    """Train (or resume) one diffusion stage; writes model + loss log."""
    spec = cfg.diffusion.stage1 if stage == "norf" else cfg.diffusion.stage2
    sched = _schedule(cfg)
    states, conds = _stage_training_data(cfg, stage)
    ck = cfg.checkpoint_dir
    ck.mkdir(parents=True, exist_ok=True)
    ckpt_path = ck / f"train_{stage}.npz"
    model_path = ck / f"denoiser_{stage}.npz"
    if ckpt_path.exists():
        model, opt, rng, start = load_training_state(ckpt_path, spec.train)
        log(f"  resuming {stage} stage at step {start}")
    else:
        kind = "down-up" if stage == "norf" else "plain"
        model = ConvDenoiser(
            states.shape[1],
            conds.shape[1],
            sched.T,
            kind=kind,
            hidden=spec.hidden,
            seed=spec.train.seed,
        )
        opt = Adam(model.parameters(), spec.train)
        rng = np.random.default_rng(spec.train.seed)
        start = 0
    if start >= spec.train.total_steps:
        log(f"  {stage} stage already trained")
        return ConvDenoiser.load(model_path)
    drop_slice = (1, 4) if stage == "norf" else None  # normal channels of cond

    def callback(step, val):
        if (step + 1) % checkpoint_every == 0:
            save_training_state(ckpt_path, model, opt, rng, step + 1)
        if step % max(1, spec.train.total_steps // 20) == 0:
            log(f"  step {step}: loss {val:.4f}")

    history, opt, rng = train_denoiser(
        model,
        states,
        conds,
        sched,
        spec.train,
        drop_all_prob=spec.drop_all_prob,
        drop_slice=drop_slice,
        drop_slice_prob=spec.drop_normals_prob,
        callback=callback,
        opt=opt,
        rng=rng,
        start_step=start,
    )
    save_training_state(ckpt_path, model, opt, rng, spec.train.total_steps)
    model.save(model_path)
    _write_loss_csv(ck / f"loss_{stage}.csv", history, start=start)
    log(f"  {stage} stage done, last loss {history[-1]:.4f}")
    return model


# -- estimation ------------------------------------------------------------


@dataclass
class PipelineModels:
    sched: NoiseSchedule
    stage1: ConvDenoiser
    stage2: ConvDenoiser
    library: FieldLibrary
    ref_std: np.ndarray


def load_models(cfg: RunConfig):
    ck = cfg.checkpoint_dir
    for name in ("denoiser_norf.npz", "denoiser_shape.npz"):
        if not (ck / name).exists():
            raise UsageError(f"missing {ck / name}; train both stages first")
    lib, ref_std = load_library(cfg)
    return PipelineModels(
        sched=_schedule(cfg),
        stage1=ConvDenoiser.load(ck / "denoiser_norf.npz"),
        stage2=ConvDenoiser.load(ck / "denoiser_shape.npz"),
        library=lib,
        ref_std=ref_std,
    )


@dataclass
class Hypothesis:
    index: int
    ok: bool
    reason: str = ""
    norf: NorfMap | None = None
    triplane: object = None
    mesh: object = None
    transform: Sim3Transform | None = None
    inlier_count: int = -1
    mean_residual: float = dc_field(default=float("inf"))
    threshold: float = 0.0


def _hypothesis_init_noise(seed, count, shape):
    """Order-stable per-hypothesis noise from independent seed streams."""
    return np.stack(
        [np.random.default_rng([seed, k]).standard_normal(shape) for k in range(count)]
    )


def estimate_view(
    cfg: RunConfig,
    models: PipelineModels,
    obs: Observation,
    cam: Camera,
    depth_map: NorfMap | None,
    n_hypotheses,
    seed,
    out_dir: Path | None = None,
):
    """Sample pose-and-shape hypotheses for one observation.

    depth_map supplies the metric depth and mask used for registration; pass
    None to skip registration (meshes only). Per-hypothesis failures are
    recorded, not raised.
    """
    d1, d2 = cfg.diffusion.stage1, cfg.diffusion.stage2
    p, n = cfg.triplane.p, cfg.triplane.n
    side = 2**p
    res = obs.image.shape[0]
    cond1 = obs.conditioning()
    # stage 1: all hypotheses share the conditioning, so run them as a batch;
    # determinism comes from the per-hypothesis initial noise
    u1 = _hypothesis_init_noise(seed, n_hypotheses, (6, res, res))
    cond1_b = np.broadcast_to(cond1[None], (n_hypotheses,) + cond1.shape).copy()
    states = dpm_solver_pp_sample(
        models.stage1,
        cond1_b,
        models.sched,
        d1.solver_steps,
        u_init=u1,
        cfg_weight=d1.cfg_weight if d1.cfg_weight > 0 else None,
    )
    hyps = [Hypothesis(index=k, ok=True) for k in range(n_hypotheses)]
    conds2 = np.zeros((n_hypotheses, 12 * 4, side, side))
    for k, h in enumerate(hyps):
        h.norf = NorfMap.from_state(states[k])
        try:
            conds2[k] = ortho_norf(h.norf, p).transpose(2, 0, 1)
        except InsufficientEvidenceError as e:
            h.ok = False
            h.reason = str(e)
    # stage 2 batch (failed rows get null conditioning but are discarded)
    u2 = _hypothesis_init_noise(seed + 1, n_hypotheses, (3 * n, side, side))
    z_imgs = dpm_solver_pp_sample(
        models.stage2,
        conds2,
        models.sched,
        d2.solver_steps,
        u_init=u2,
        cfg_weight=d2.cfg_weight if d2.cfg_weight > 0 else None,
    )
    for k, h in enumerate(hyps):
        if not h.ok:
            continue
        z_norm = from_image_layout(
            np.clip(z_imgs[k].transpose(1, 2, 0), -1.0, 1.0), p, n
        )
        h.triplane = denormalize_triplane(z_norm, models.ref_std)
        h.mesh = extract_surface(models.library, h.triplane, lod=cfg.eval.lod)
        if len(h.mesh.faces) == 0:
            h.ok = False
            h.reason = "sampled field has no surface"
            continue
        if depth_map is not None:
            _register_hypothesis(cfg, h, cam, depth_map, seed)
    if out_dir is not None:
        _write_estimate(cfg, out_dir, hyps, seed)
    return hyps


def _register_hypothesis(cfg, h: Hypothesis, cam, depth_map: NorfMap, seed):
    """RANSAC-align predicted normalized coords against observed depth."""
    joint = h.norf.mask & depth_map.mask & (depth_map.depth > 0)
    pts_cam, pix, _ = back_project(depth_map.depth, joint, cam)
    scene = cam.to_world(pts_cam)
    norf_pts = h.norf.coords[pix[:, 0], pix[:, 1]]
    if len(norf_pts) < 3:
        h.ok = False
        h.reason = "too few depth correspondences"
        return
    extent = scene.max(axis=0) - scene.min(axis=0)
    threshold = max(cfg.eval.ransac_threshold_frac * np.linalg.norm(extent), 1e-6)
    corr = CorrespondenceSet(norf_points=norf_pts, scene_points=scene)
    try:
        tf, inliers = ransac_register(
            corr,
            threshold,
            iterations=cfg.eval.ransac_iterations,
            rng=np.random.default_rng([seed, 997, h.index]),
        )
    except (RegistrationFailedError, UsageError) as e:
        h.ok = False
        h.reason = str(e)
        return
    res = np.linalg.norm(tf.apply(norf_pts) - scene, axis=1)
    h.transform = tf
    h.inlier_count = inliers
    h.mean_residual = float(res[res < threshold].mean())
    h.threshold = threshold


def _write_estimate(cfg, out_dir: Path, hyps, seed):
    out_dir.mkdir(parents=True, exist_ok=True)
    registered = [(h.inlier_count, h.mean_residual) for h in hyps]
    summary = {
        "seed": seed,
        "n_hypotheses": len(hyps),
        "selected": select_hypothesis(registered) if any(h.ok for h in hyps) else None,
        "hypotheses": [],
    }
    for h in hyps:
        hdir = out_dir / f"hyp_{h.index:02d}"
        hdir.mkdir(exist_ok=True)
        entry = {"index": h.index, "ok": h.ok, "reason": h.reason}
        if h.norf is not None:
            save_norf_map(hdir / "norf", h.norf)
        if h.ok:
            save_triplane(hdir / "shape.tpl", h.triplane)
            save_ply(hdir / "mesh.ply", h.mesh.vertices, h.mesh.faces, h.mesh.normals)
            if h.transform is not None:
                report = registration_report(
                    h.transform, h.inlier_count, h.mean_residual, h.threshold
                )
                with open(hdir / "registration.json", "w") as f:
                    json.dump(report, f, indent=2, sort_keys=True)
                    f.write("\n")
                entry["inlier_count"] = h.inlier_count
                entry["mean_residual"] = h.mean_residual
        summary["hypotheses"].append(entry)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def estimate_all(cfg: RunConfig, models=None, log=print):
    """Run estimation on every held-out view; returns {view_key: hyps}."""
    manifest = load_manifest(cfg)
    models = models or load_models(cfg)
    results = {}
    for oi, obj in enumerate(manifest["objects"]):
        for vi, view in enumerate(obj["views"]):
            if not view["held_out"]:
                continue
            m, cam, obs = load_view(cfg, obj["id"], view["tag"])
            key = f"{obj['id']}/{view['tag']}"
            seed = int(
                np.random.default_rng([cfg.seed, 7, oi, vi]).integers(0, 2**31)
            )
            out = cfg.estimate_dir / obj["id"] / view["tag"]
            hyps = estimate_view(
                cfg, models, obs, cam, m, cfg.eval.n_hypotheses, seed, out_dir=out
            )
            results[key] = hyps
            n_ok = sum(h.ok for h in hyps)
            log(f"  {key}: {n_ok}/{len(hyps)} hypotheses registered")
    return results


# -- evaluation ------------------------------------------------------------


def _gt_scene_cloud(obj, n_points, rng):
    shape = normalize_to_unit_cube(shape_from_params(obj["family"], obj["params"]))
    pose = Sim3Transform.from_dict(obj["pose"])
    return pose.apply(surface_points(shape, n_points, rng))


def _load_estimated_hypotheses(est_dir: Path):
    """Per-hypothesis (scene_sampler, inliers, residual) from disk."""
    with open(est_dir / "summary.json") as f:
        summary = json.load(f)
    out = []
    for entry in summary["hypotheses"]:
        hdir = est_dir / f"hyp_{entry['index']:02d}"
        reg_path = hdir / "registration.json"
        if not entry["ok"] or not reg_path.exists():
            out.append(None)
            continue
        verts, faces, _ = load_ply(hdir / "mesh.ply")
        with open(reg_path) as f:
            reg = json.load(f)
        tf = Sim3Transform.from_dict(reg["transform"])
        out.append((verts, faces, tf, reg["inlier_count"], reg["mean_residual"]))
    return out


def _masked_mean(values):
    arr = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(arr)
    return float(arr[finite].mean()) if finite.any() else float("nan")


def evaluate(cfg: RunConfig, log=print):
    """Aggregate hypothesis quality over all estimated held-out views.

    Produces oracle and inlier-selected best-of-k Chamfer curves, a
    per-scene table, and an aggregate report. The inlier-selected curve can
    never beat the oracle (which picks by ground-truth Chamfer), and both
    are non-increasing in k by construction of the oracle.
    """
    from .surface import Mesh

    manifest = load_manifest(cfg)
    ev = cfg.eval
    per_view = []
    for oi, obj in enumerate(manifest["objects"]):
        for view in obj["views"]:
            if not view["held_out"]:
                continue
            est_dir = cfg.estimate_dir / obj["id"] / view["tag"]
            if not (est_dir / "summary.json").exists():
                raise UsageError(f"no estimate under {est_dir}; run estimate first")
            rng = np.random.default_rng([cfg.seed, 5, oi])
            gt = _gt_scene_cloud(obj, ev.n_points, rng)
            chamfers, fscores, sel_stats = [], [], []
            for loaded in _load_estimated_hypotheses(est_dir):
                if loaded is None:
                    chamfers.append(float("inf"))
                    fscores.append(0.0)
                    sel_stats.append((-1, float("inf")))
                    continue
                verts, faces, tf, inliers, resid = loaded
                mesh = Mesh(vertices=verts, faces=faces)
                cloud = tf.apply(mesh.sample_points(ev.n_points, rng))
                chamfers.append(chamfer_l1(cloud, gt))
                fscores.append(fscore(cloud, gt, ev.f_threshold))
                sel_stats.append((inliers, resid))
            per_view.append(
                {
                    "object": obj["id"],
                    "family": obj["family"],
                    "tag": view["tag"],
                    "chamfer": chamfers,
                    "fscore": fscores,
                    "selection": sel_stats,
                }
            )
            log(f"  {obj['id']}/{view['tag']}: best chamfer {min(chamfers):.4f}")
    n = ev.n_hypotheses
    # curves are averaged over views whose first hypothesis registered, so
    # every per-view best-of-k sequence is finite and monotone and the mean
    # inherits both properties; skipped views are reported, not hidden
    used = [v for v in per_view if np.isfinite(v["chamfer"][0])]
    if not used:
        raise UsageError("no view has a registered first hypothesis")
    oracle_curve, selected_curve = [], []
    for k in range(1, n + 1):
        oracle_curve.append(float(np.mean([min(v["chamfer"][:k]) for v in used])))
        picks = [select_hypothesis(v["selection"][:k]) for v in used]
        selected_curve.append(
            float(np.mean([v["chamfer"][i] for v, i in zip(used, picks)]))
        )
    per_scene = {}
    for v in used:
        sel = select_hypothesis(v["selection"])
        per_scene.setdefault(v["object"], []).append(v["chamfer"][sel])
    scene_means = {k: _masked_mean(vals) for k, vals in sorted(per_scene.items())}
    finite_means = [m for m in scene_means.values() if np.isfinite(m)]
    report = {
        "n_views": len(per_view),
        "n_views_used": len(used),
        "n_hypotheses": n,
        "oracle_curve": oracle_curve,
        "selected_curve": selected_curve,
        "first_hypothesis_chamfer": oracle_curve[0],
        "best_of_n_chamfer": oracle_curve[-1],
        "selected_chamfer": selected_curve[-1],
        "selected_fscore": float(
            np.mean([v["fscore"][select_hypothesis(v["selection"])] for v in used])
        ),
        "failed_hypotheses": int(
            sum(not np.isfinite(c) for v in per_view for c in v["chamfer"])
        ),
        "per_scene_chamfer": scene_means,
        "aggregate": scene_aggregate(finite_means),
    }
    rp = cfg.report_dir
    rp.mkdir(parents=True, exist_ok=True)
    with open(rp / "eval.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(rp / "per_scene.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["object", "family", "view", "selected_chamfer", "best_chamfer"])
        for v in per_view:
            sel = select_hypothesis(v["selection"])
            w.writerow(
                [
                    v["object"],
                    v["family"],
                    v["tag"],
                    f"{v['chamfer'][sel]:.6f}",
                    f"{min(v['chamfer']):.6f}",
                ]
            )
    _plot_curves(rp / "curves.png", oracle_curve, selected_curve)
    return report


def _plot_curves(path, oracle_curve, selected_curve):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks = np.arange(1, len(oracle_curve) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, oracle_curve, "o-", label="oracle best-of-k")
    ax.plot(ks, selected_curve, "s-", label="inlier-selected")
    ax.set_xlabel("hypotheses k")
    ax.set_ylabel("mean Chamfer")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
