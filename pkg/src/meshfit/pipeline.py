"""End-to-end orchestration: initializer, four fitting stages, fit report.

The scene is normalized so the base mesh's bounding-box diagonal is 1; the
distance thresholds (mask 0.5 / 0.01, barrier 0.01) are anchored to that
scale, and outputs are rescaled back to input units. The base mesh is never
modified; the tool writes only the moved accessory and the report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bvh
from .collision import penetration_stats
from .deformation import DeformationConfig, elastic_deform
from .energies import (
    BARRIER_WIDTH,
    RIGID_PROXIMITY_THRESHOLD,
    MaterialParams,
    barrier_loss,
    lame_from_material,
    material_by_name,
    proximity_loss,
)
from .errors import ValidationError
from .mesh import TriangleMesh, load_mesh, load_region, save_mesh
from .rigid import OptimizerConfig, rigid_finetune, tight_fit
from .scene import Scene, build_scene
from .trajectory import SamplingConfig, resolve_intersections
from .transforms import (
    ScaledRigidTransform,
    apply,
    rotation_about_axis,
    rotation_between_vectors,
)

DEFAULT_MATERIAL = "leather"


@dataclass
class StepToggles:
    step1: bool = True
    step2: bool = True
    step3: bool = True
    step4: bool = True

    def validate(self, force_ablation: bool) -> None:
        """Steps 1..3 must form a prefix; step 4 requires step 3. Ablations
        that break the chain need --force-ablation."""
        if force_ablation:
            return
        if self.step2 and not self.step1:
            raise ValidationError("step 2 requires step 1 (or --force-ablation)")
        if self.step3 and not self.step2:
            raise ValidationError(
                "step 3 requires a non-intersecting start from step 2 "
                "(or --force-ablation)"
            )
        if self.step4 and not self.step3:
            raise ValidationError("step 4 requires step 3 (or --force-ablation)")


@dataclass
class InitConfig:
    k_azimuth: int = 8
    scale_constant: float = 2.0
    jitter_sigma: float = 0.0  # gaussian jitter on the initial translation
    azimuth_index: int | None = None  # force one azimuth, skipping the scoring
    score_iterations: int = 30

    def __post_init__(self):
        if self.k_azimuth < 1:
            raise ValidationError("k_azimuth must be >= 1")


@dataclass
class RunConfig:
    base_path: Path
    object_path: Path
    region_path: Path
    out_path: Path
    material_name: str | None = DEFAULT_MATERIAL
    youngs: float | None = None
    poisson: float | None = None
    seed: int = 0
    steps: StepToggles = field(default_factory=StepToggles)
    force_ablation: bool = False
    trace: bool = False
    verbose: bool = False
    region_normal: np.ndarray | None = None
    initial_transform: ScaledRigidTransform | None = None
    leaf_size: int = bvh.DEFAULT_LEAF_SIZE
    rigid_threshold: float = RIGID_PROXIMITY_THRESHOLD
    barrier_width: float = BARRIER_WIDTH
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    deformation: DeformationConfig = field(default_factory=DeformationConfig)
    init: InitConfig = field(default_factory=InitConfig)

    def material(self) -> MaterialParams:
        if self.youngs is not None:
            if self.poisson is None:
                raise ValidationError("--youngs requires --poisson")
            return lame_from_material(self.youngs, self.poisson)
        return material_by_name(self.material_name or DEFAULT_MATERIAL)


def heuristic_init(
    scene: Scene,
    init: InitConfig,
    optimizer: OptimizerConfig,
    threshold: float = RIGID_PROXIMITY_THRESHOLD,
    seed: int = 0,
) -> tuple[ScaledRigidTransform, dict]:
    """Deterministic initial pose.

    Scale and translation come from closed forms (object sized to twice the
    region extent, centered on the region centroid and offset outward along
    its normal); orientation aligns the object's shortest principal axis
    with the region normal and scores a ring of azimuth spins by a short
    truncated tight-fit run. Near-equal score ties keep the lowest index.
    """
    frame = scene.frame
    obj = scene.obj
    rng = np.random.default_rng(seed)

    obj_diag = obj.bbox_diagonal
    scale = init.scale_constant * frame.bbox_diag / (obj_diag + 1e-9)

    centered = obj.vertices - obj.centroid
    covariance = centered.T @ centered / len(centered)
    eigvals, eigvecs = np.linalg.eigh(covariance)
    spread = eigvals[-1] if eigvals[-1] > 0 else 1.0
    isotropic = (eigvals[-1] - eigvals[0]) / spread < 1e-6
    short_axis = eigvecs[:, 0]
    if short_axis @ frame.average_normal < 0:
        short_axis = -short_axis
    base_rotation = rotation_between_vectors(short_axis, frame.average_normal)

    jitter = (
        rng.normal(0.0, init.jitter_sigma, 3) if init.jitter_sigma > 0 else np.zeros(3)
    )
    hover = 0.5 * scale * obj_diag
    translation = (
        frame.centroid + hover * frame.average_normal - scene.pivot + jitter
    )

    def candidate(azimuth_index: int) -> ScaledRigidTransform:
        angle = 2.0 * np.pi * azimuth_index / init.k_azimuth
        rotation = rotation_about_axis(frame.average_normal, angle) @ base_rotation
        return ScaledRigidTransform.from_rotation(rotation, translation, scale)

    info: dict = {"scale": scale, "isotropic": bool(isotropic)}
    if init.azimuth_index is not None:
        info["azimuth"] = int(init.azimuth_index) % init.k_azimuth
        info["scores"] = []
        return candidate(info["azimuth"]), info
    if isotropic or init.k_azimuth == 1:
        info["azimuth"] = 0
        info["scores"] = []
        return candidate(0), info

    scoring = OptimizerConfig(
        step_size=optimizer.step_size,
        beta1=optimizer.beta1,
        beta2=optimizer.beta2,
        max_iterations=init.score_iterations,
        convergence_tol=optimizer.convergence_tol,
        backtrack_factor=optimizer.backtrack_factor,
        seed=optimizer.seed,
    )
    scores = []
    best_index = 0
    best_score = np.inf
    for index in range(init.k_azimuth):
        result = tight_fit(candidate(index), scene, scoring, threshold)
        score = result.final_losses[0]
        scores.append(score)
        # near-exact ties keep the earlier azimuth
        if score < best_score * (1.0 - 1e-9) - 1e-18:
            best_score = score
            best_index = index
    info["azimuth"] = best_index
    info["scores"] = scores
    return candidate(best_index), info


@dataclass
class StepRow:
    name: str
    transform: ScaledRigidTransform | None
    proximity: float
    contact: float
    intersecting_faces: int
    max_penetration: float
    iterations: int = 0
    loss_trace: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


@dataclass
class PipelineOutcome:
    report: dict
    exit_code: int
    out_path: Path
    report_path: Path
    extra_files: list[Path] = field(default_factory=list)


def _pose_metrics(scene: Scene, transform: ScaledRigidTransform, config: RunConfig):
    verts, surface = scene.transformed_object(transform)
    prox = proximity_loss(
        verts,
        scene.obj.faces,
        scene.region_vertices,
        config.rigid_threshold,
        region_surface=scene.region_surface,
        object_surface=surface,
    ).value
    contact = barrier_loss(
        verts, config.barrier_width, base_surface=scene.base_surface
    ).value
    faces, depth = penetration_stats(
        scene.obj, verts, scene.base, scene.base_surface.tree, obj_tree=surface.tree
    )
    return verts, prox, contact, faces, depth


def run_pipeline(config: RunConfig) -> PipelineOutcome:
    from .report import render_trace_outputs, report_to_dict, write_report

    timings: dict[str, float] = {}
    warnings: list[str] = []
    started = time.perf_counter()

    config.steps.validate(config.force_ablation)
    material = config.material()

    base_raw = load_mesh(config.base_path)
    obj_raw = load_mesh(config.object_path)
    mask = load_region(config.region_path, base_raw)

    norm_scale = 1.0 / base_raw.bbox_diagonal
    base = base_raw.scaled(norm_scale)
    obj = obj_raw.scaled(norm_scale)
    scene = build_scene(base, obj, mask, region_normal=config.region_normal, leaf_size=config.leaf_size)
    timings["load"] = time.perf_counter() - started

    rows: list[StepRow] = []

    def record(name, transform, iterations=0, loss_trace=None, notes=None):
        _, prox, contact, faces, depth = _pose_metrics(scene, transform, config)
        rows.append(
            StepRow(
                name,
                transform.copy(),
                prox,
                contact,
                faces,
                depth / norm_scale,
                iterations,
                list(loss_trace or []),
                list(notes or []),
            )
        )

    t0 = time.perf_counter()
    init_info: dict = {}
    if config.initial_transform is not None:
        given = config.initial_transform
        current = ScaledRigidTransform(
            given.e1, given.e2, np.asarray(given.t, dtype=np.float64) * norm_scale, given.s
        )
        init_info = {"source": "explicit"}
    else:
        current, init_info = heuristic_init(
            scene, config.init, config.optimizer, config.rigid_threshold, config.seed
        )
        init_info["source"] = "heuristic"
    timings["init"] = time.perf_counter() - t0
    record("init", current, notes=[f"azimuth={init_info.get('azimuth')}"] if "azimuth" in init_info else [])

    tight_scale = current.s
    trajectory_stats: dict = {}

    if config.steps.step1:
        t0 = time.perf_counter()
        res1 = tight_fit(
            current, scene, config.optimizer, config.rigid_threshold, config.barrier_width
        )
        timings["step1_tight_fit"] = time.perf_counter() - t0
        warnings.extend(res1.warnings)
        current = res1.transform
        tight_scale = current.s
        record("step1_tight_fit", current, res1.iterations_used, res1.loss_trace, res1.warnings)

    if config.steps.step2:
        t0 = time.perf_counter()
        sampling = config.sampling
        if sampling.seed == 0 and config.seed != 0:
            sampling = SamplingConfig(**{**sampling.__dict__, "seed": config.seed})
        res2 = resolve_intersections(current, sampling, scene, config.rigid_threshold)
        timings["step2_trajectory"] = time.perf_counter() - t0
        warnings.extend(res2.warnings)
        current = res2.transform
        trajectory_stats = {
            "candidates_tried": res2.candidates_tried,
            "rounds": res2.rounds,
            "accepted_timesteps": res2.accepted_timesteps,
            "best_loss": res2.best_loss,
        }
        if config.verbose:
            trajectory_stats["per_round_accepted"] = res2.per_round_accepted
        record("step2_trajectory", current, notes=res2.warnings)

    if config.steps.step3:
        t0 = time.perf_counter()
        optimizer3 = OptimizerConfig(**config.optimizer.__dict__)
        if optimizer3.scale_min is None:
            optimizer3.scale_min = 0.8 * tight_scale
        if optimizer3.scale_max is None:
            optimizer3.scale_max = 1.25 * tight_scale
        res3 = rigid_finetune(
            current,
            scene,
            optimizer3,
            config.rigid_threshold,
            config.barrier_width,
            certify=not config.force_ablation,
        )
        timings["step3_finetune"] = time.perf_counter() - t0
        warnings.extend(res3.warnings)
        current = res3.transform
        record("step3_finetune", current, res3.iterations_used, res3.loss_trace, res3.warnings)

    final_losses = {"elastic": 0.0}
    if config.steps.step4:
        t0 = time.perf_counter()
        rest = obj.replace_vertices(apply(current, obj.vertices, scene.pivot))
        res4 = elastic_deform(
            rest,
            scene,
            material,
            config.deformation,
            certify=not config.force_ablation,
        )
        timings["step4_deform"] = time.perf_counter() - t0
        warnings.extend(res4.warnings)
        final_vertices = res4.mesh.vertices
        final_losses = {
            "proximity": res4.final_losses[0],
            "contact": res4.final_losses[1],
            "elastic": res4.final_losses[2],
        }
        faces4, depth4 = penetration_stats(
            scene.obj, final_vertices, scene.base, scene.base_surface.tree
        )
        rows.append(
            StepRow(
                "step4_deform",
                None,
                res4.final_losses[0],
                res4.final_losses[1],
                faces4,
                depth4 / norm_scale,
                res4.iterations_used,
                res4.loss_trace,
                res4.warnings,
            )
        )
    else:
        final_vertices = apply(current, obj.vertices, scene.pivot)

    # final metrics, by the exact оracle
    t0 = time.perf_counter()
    final_faces, final_depth = penetration_stats(
        scene.obj, final_vertices, scene.base, scene.base_surface.tree
    )
    timings["final_metrics"] = time.perf_counter() - t0

    out_path = Path(config.out_path)
    out_mesh = obj_raw.replace_vertices(final_vertices / norm_scale)
    save_mesh(out_mesh, out_path)

    certified = (
        config.steps.step2
        and config.steps.step3
        and not config.force_ablation
        and final_faces == 0
        and final_depth == 0.0
    )
    report = report_to_dict(
        config=config,
        norm_scale=norm_scale,
        pivot=scene.pivot / norm_scale,
        rows=rows,
        final_faces=final_faces,
        final_depth=final_depth / norm_scale,
        final_losses=final_losses,
        trajectory_stats=trajectory_stats,
        init_info=init_info,
        warnings=warnings,
        timings=timings,
        certified=certified,
    )
    report_path = Path(str(out_path) + ".report.json")
    write_report(report, report_path)

    extra_files: list[Path] = []
    if config.trace:
        extra_files = render_trace_outputs(rows, out_path)

    exit_code = 0 if certified and not warnings else 2
    return PipelineOutcome(report, exit_code, out_path, report_path, extra_files)
