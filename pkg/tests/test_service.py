import numpy as np
import pytest
from fastapi.testclient import TestClient

from styledrag import synthdata
from styledrag.bootstrap import CandidatePair
from styledrag.images import png_bytes
from styledrag.insertion import InsertionModel, default_insertion_arch
from styledrag.orchestrator.service import create_app
from styledrag.orchestrator.workspace import Workspace


@pytest.fixture()
def studio(tmp_path):
    ws = Workspace(tmp_path / "ws")
    # a tiny untrained insertion model is enough for the bootstrap surfaces
    model = InsertionModel(default_insertion_arch(image_size=32, base_width=8),
                           seed=0, sample_steps=2)
    ws.hub.put("insertion", model.to_bytes())
    app = create_app(ws)
    client = TestClient(app)
    yield ws, client
    app.state.queue.shutdown()


def wait_job(client, job_id, timeout=60.0):
    import time
    deadline = time.time() + timeout
    while time.time() < deadline:
        state = client.get(f"/api/jobs/{job_id}").json()
        if state["state"] in ("done", "failed"):
            return state
        time.sleep(0.05)
    raise TimeoutError(job_id)


def seeded_candidates(n=4, size=32):
    pairs = []
    for s in range(n):
        scene = synthdata.gen_scene(synthdata.CARTOON, s, size=size)
        pairs.append(CandidatePair(id=f"c{s:02d}", image=scene.with_effects,
                                   mask=scene.mask, clean_pred=scene.clean,
                                   score=0.9 - 0.1 * s))
    return pairs


def test_asset_upload_and_fetch(studio):
    ws, client = studio
    img = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
    data = png_bytes(img)
    r = client.post("/api/assets", content=data)
    assert r.status_code == 200
    body = r.json()
    assert body["v"] == 1
    r2 = client.get(f"/api/assets/{body['hash']}")
    assert r2.status_code == 200 and r2.content == data
    missing = client.get("/api/assets/" + "0" * 64)
    assert missing.status_code == 404
    assert {"code", "message", "details"} <= set(missing.json())


def test_asset_upload_rejects_non_png(studio):
    _, client = studio
    r = client.post("/api/assets", content=b"definitely not a png")
    assert r.status_code == 400


def test_job_submission_validation_error_paths(studio):
    _, client = studio
    r = client.post("/api/jobs", json={"v": 1, "kind": "full_pipeline",
                                       "inputs": {"class_noun": "disk"}})
    assert r.status_code == 422
    fields = {d["field"] for d in r.json()["details"]["fields"]}
    assert "subject_asset" in fields and "placement" in fields
    r = client.post("/api/jobs", json={"v": 1, "kind": "nonsense", "inputs": {}})
    assert r.status_code == 400
    r = client.get("/api/jobs/doesnotexist")
    assert r.status_code == 404


def test_insert_job_runs_through_service(studio):
    ws, client = studio
    subject, _, _, _ = synthdata.gen_subject_image(5, size=32)
    target = synthdata.gen_scene(synthdata.PHOTO, 9, size=32).clean
    subject_hash = client.post("/api/assets", content=png_bytes(subject)).json()["hash"]
    target_hash = client.post("/api/assets", content=png_bytes(target)).json()["hash"]
    payload = {"v": 1, "kind": "insert",
               "inputs": {"subject_asset": subject_hash, "target_asset": target_hash,
                          "placement": {"x": 16, "y": 20, "scale": 0.8}, "seed": 4}}
    job_id = client.post("/api/jobs", json=payload).json()["id"]
    state = wait_job(client, job_id)
    assert state["state"] == "done", state.get("error")
    assert state["artifacts"]["placement"] == {"x": 16, "y": 20, "scale": 0.8,
                                               "rotation": 0.0}
    final = client.get(f"/api/assets/{state['artifacts']['final_png']}")
    assert final.status_code == 200
    # identical resubmission reproduces identical artifact hashes
    job2 = client.post("/api/jobs", json=payload).json()["id"]
    state2 = wait_job(client, job2)
    assert state2["artifacts"]["final_png"] == state["artifacts"]["final_png"]


def test_cancel_endpoint(studio):
    ws, client = studio
    subject, _, _, _ = synthdata.gen_subject_image(5, size=32)
    h = client.post("/api/assets", content=png_bytes(subject)).json()["hash"]
    # two jobs: with one worker the second can be cancelled while queued
    payload = {"v": 1, "kind": "insert",
               "inputs": {"subject_asset": h, "target_asset": h,
                          "placement": {"x": 16, "y": 16}}}
    client.post("/api/jobs", json=payload)
    second = client.post("/api/jobs", json=payload).json()["id"]
    r = client.post(f"/api/jobs/{second}/cancel")
    assert r.status_code == 200
    assert r.json()["state"] in ("failed", "done")


def test_bootstrap_review_flow(studio):
    ws, client = studio
    pairs = seeded_candidates()
    ws.candidates.add(pairs, round_index=0)

    listing = client.get("/api/bootstrap/candidates", params={"round": 0}).json()
    assert listing["pending"] == 4
    assert [c["id"] for c in listing["candidates"]] == [p.id for p in pairs]
    for c in listing["candidates"]:
        assert client.get(f"/api/assets/{c['x_asset']}").status_code == 200
        assert client.get(f"/api/assets/{c['y_asset']}").status_code == 200

    # retrain is blocked while any verdict is pending
    r = client.post("/api/bootstrap/retrain", json={"v": 1, "round": 0,
                                                    "policy": {"kind": "human"}})
    assert r.status_code == 409
    assert len(r.json()["details"]["pending"]) == 4

    # accept 3, reject 1
    for pair in pairs[:3]:
        r = client.post(f"/api/bootstrap/candidates/{pair.id}/verdict",
                        json={"v": 1, "verdict": "accepted"})
        assert r.status_code == 200
    client.post(f"/api/bootstrap/candidates/{pairs[3].id}/verdict",
                json={"v": 1, "verdict": "rejected"})
    # double verdict is rejected
    r = client.post(f"/api/bootstrap/candidates/{pairs[0].id}/verdict",
                    json={"v": 1, "verdict": "rejected"})
    assert r.status_code == 400

    listing = client.get("/api/bootstrap/candidates", params={"round": 0}).json()
    verdicts = {c["id"]: c["verdict"] for c in listing["candidates"]}
    assert listing["pending"] == 0
    assert sorted(v for v in verdicts.values()) == ["accepted"] * 3 + ["rejected"]
    events = ws.candidates.events()
    assert [(e["id"], e["verdict"]) for e in events] == \
        [(pairs[0].id, "accepted"), (pairs[1].id, "accepted"),
         (pairs[2].id, "accepted"), (pairs[3].id, "rejected")]

    # retrain now runs and its audit log uses exactly the accepted ids
    r = client.post("/api/bootstrap/retrain",
                    json={"v": 1, "round": 0, "policy": {"kind": "human"},
                          "adapt": {"steps": 3, "batch_size": 2}})
    assert r.status_code == 200
    job_id = r.json()["id"]
    state = wait_job(client, job_id)
    assert state["state"] == "done", state.get("error")
    rnd = state["artifacts"]["round"]
    assert sorted(rnd["accepted_ids"]) == [p.id for p in pairs[:3]]
    sampled = {i for entry in rnd["audit_log"] for i in entry["ids"]}
    assert sampled <= set(rnd["accepted_ids"])
    models = client.get("/api/models").json()["models"]
    assert any(m["id"] == "insertion" for m in models)


def test_models_listing(studio):
    ws, client = studio
    r = client.get("/api/models")
    assert r.status_code == 200
    models = {m["id"] for m in r.json()["models"]}
    assert "insertion" in models
