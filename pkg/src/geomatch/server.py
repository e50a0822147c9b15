"""HTTP service: per-location predictions, constrained recommendations,
and bounded backtest scenarios for the companion UI.

Model state is loaded once from a pipeline workdir and never mutated, so
request handling is lock-free; every response carries the model-set
content hash. Scenario simulation is capped per request and guarded by a
small worker semaphore.
"""

from __future__ import annotations

import math
import os
import threading
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from . import backtest as bt
from .boosting import load_modelset, modelset_hash
from .datamodel import load_dataset, load_locations, load_schema
from .manifest import PipelineManifest
from .preferences import load_mnl, rank_all, rank_scores
from .recommender import load_matrix, predict_profile, recommend
from .seeds import derive_seed

TRANSPARENCY_NOTE = (
    "These recommendations rank locations by predicted annual employment "
    "income in the first full year after arrival, estimated from outcomes "
    "of earlier arrivals with similar profiles. They optimize that single "
    "near-term metric only: they are not a guarantee of your own income, "
    "and they do not weigh other goals such as long-term earnings, "
    "community ties, or cost of living unless the rent-adjusted view is "
    "selected."
)

SIMULATE_RUN_CAP = 20
_SIM_WORKERS = threading.Semaphore(4)


class PredictRequest(BaseModel):
    profile: dict
    outcome_mode: str | None = None
    case_size: int = 1


class RecommendRequest(BaseModel):
    profile: dict
    unacceptable: list[int] = Field(default_factory=list)
    phi: int | None = None
    z: int = 3
    outcome_mode: str | None = None
    case_size: int = 1


class SimulateRequest(BaseModel):
    pi_max: float
    compliance_mode: str = "linear-in-quantile"
    phi: int | None = None
    z: int = 3
    n_runs: int = 10
    excluded_locations: list[int] = Field(default_factory=list)
    seed: int | None = None


class ServiceState:
    def __init__(self, workdir, auth_token: str | None = None):
        manifest = PipelineManifest.load(workdir)
        manifest.verify("models", "schema", "locations", "dataset", "matrix", "mnl")
        self.manifest = manifest
        self.schema = load_schema(manifest.path("schema"))
        self.locations = load_locations(manifest.path("locations"))
        self.dataset = load_dataset(manifest.path("dataset"), self.schema, self.locations)
        self.modelset = load_modelset(manifest.path("models"))
        self.model_hash = modelset_hash(manifest.path("models"))
        self.matrix = load_matrix(manifest.path("matrix"))
        self.mnl = load_mnl(manifest.path("mnl"))
        self.ranking = rank_all(
            self.mnl, self.dataset, seed=derive_seed(manifest.root_seed, "ranking")
        )
        self.rents = {loc.id: loc.annual_rent for loc in self.locations}
        self.auth_token = auth_token
        self.modeled = tuple(sorted(self.modelset.models))

    def validate_profile(self, profile: dict) -> dict:
        """Coerce a profile; raise 422 naming every bad field."""
        bad, clean = [], {}
        for spec in self.schema.features:
            if spec.name not in profile:
                bad.append(spec.name)
                continue
            v = profile[spec.name]
            if spec.kind == "numeric":
                try:
                    v = float(v)
                    if not math.isfinite(v):
                        raise ValueError
                except (TypeError, ValueError):
                    bad.append(spec.name)
                    continue
            else:
                v = str(v)
                if v not in spec.levels:
                    v = "missing"  # unknown levels route to the missing branch
            clean[spec.name] = v
        if bad:
            raise HTTPException(
                status_code=422,
                detail={"invalid_fields": bad, "message": "profile failed schema validation"},
            )
        return clean


def create_app(workdir, auth_token: str | None = None,
               run_cap: int = SIMULATE_RUN_CAP) -> FastAPI:
    state = ServiceState(workdir, auth_token or os.environ.get("GEOMATCH_TOKEN"))
    app = FastAPI(title="geomatch", version="0.1.0")
    app.state.geomatch = state

    def require_auth(request: Request):
        if state.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {state.auth_token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    @app.get("/health")
    def health():
        return {"status": "ok", "model_hash": state.model_hash}

    @app.get("/locations")
    def locations():
        return {
            "locations": [
                {
                    "id": loc.id,
                    "name": loc.name,
                    "population": loc.population,
                    "unemployment_rate": loc.unemployment_rate,
                    "annual_rent": loc.annual_rent,
                    "growth_rate": loc.growth_rate,
                    "modeled": loc.id in state.modelset.models,
                }
                for loc in state.locations
            ],
            "model_hash": state.model_hash,
        }

    @app.get("/schema")
    def schema():
        return {"features": state.schema.to_json(), "model_hash": state.model_hash}

    @app.post("/predict", dependencies=[Depends(require_auth)])
    def predict_endpoint(req: PredictRequest):
        cov = state.validate_profile(req.profile)
        mode = req.outcome_mode or state.matrix.outcome_mode
        loc_ids, values = predict_profile(
            state.modelset, cov, mode, rents=state.rents, case_size=req.case_size
        )
        return {
            "predictions": [
                {"location_id": int(l), "predicted_value": float(v)}
                for l, v in zip(loc_ids, values)
            ],
            "outcome_mode": mode,
            "model_hash": state.model_hash,
        }

    @app.post("/recommend", dependencies=[Depends(require_auth)])
    def recommend_endpoint(req: RecommendRequest):
        cov = state.validate_profile(req.profile)
        if req.z < 1:
            raise HTTPException(status_code=422, detail={"message": "z must be >= 1"})
        unacceptable = set(req.unacceptable)
        acceptable = [l for l in state.modeled if l not in unacceptable]
        if not acceptable:
            raise HTTPException(
                status_code=422,
                detail={"message": "unacceptable set cannot cover every location"},
            )
        if req.phi is not None:
            if req.phi < 1:
                raise HTTPException(status_code=422, detail={"message": "phi must be >= 1"})
            probs = state.mnl.probabilities(cov)
            ranked = rank_scores(probs, state.mnl.location_ids, rng=None)
            top = set(int(l) for l in ranked[: req.phi])
            acceptable = [l for l in acceptable if l in top]
            if not acceptable:
                raise HTTPException(
                    status_code=422,
                    detail={"message": "phi restriction removed every acceptable location"},
                )
        mode = req.outcome_mode or state.matrix.outcome_mode
        loc_ids, values = predict_profile(
            state.modelset, cov, mode, rents=state.rents, case_size=req.case_size
        )
        rec = recommend(values, loc_ids, acceptable, req.z, rng=None)
        return {
            "recommendations": [
                {"location_id": int(l), "predicted_value": float(v)}
                for l, v in zip(rec.locations, rec.values)
            ],
            "t": rec.t,
            "z": rec.z,
            "outcome_mode": mode,
            "note": TRANSPARENCY_NOTE,
            "model_hash": state.model_hash,
        }

    @app.post("/simulate", dependencies=[Depends(require_auth)])
    def simulate_endpoint(req: SimulateRequest):
        if req.n_runs > run_cap:
            raise HTTPException(
                status_code=429,
                detail={"message": f"n_runs capped at {run_cap} per request"},
            )
        try:
            config = bt.SimulationConfig(
                pi_max=req.pi_max,
                compliance_mode=req.compliance_mode,
                phi=req.phi,
                z=req.z,
                n_runs=req.n_runs,
                outcome_mode=state.matrix.outcome_mode,
                excluded_locations=frozenset(req.excluded_locations),
                seed=req.seed if req.seed is not None else state.manifest.root_seed,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail={"message": str(exc)}) from None
        inputs = bt.SimulationInputs(state.matrix, state.dataset, state.ranking)
        with _SIM_WORKERS:
            summary = bt.simulate(inputs, config)
        out = summary.to_json()
        out["model_hash"] = state.model_hash
        return out

    return app
