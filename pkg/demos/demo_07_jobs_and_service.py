"""The workspace, job queue, and HTTP studio service.

Run:  python demos/demo_07_jobs_and_service.py

The browser studio (frontend/) talks to exactly this API; `styledrag serve
--config cfg.json` runs it under uvicorn.
"""

from fastapi.testclient import TestClient

from styledrag.images import png_bytes
from styledrag.insertion import InsertionModel, default_insertion_arch
from styledrag.orchestrator.service import create_app
from styledrag.orchestrator.workspace import Workspace
from styledrag.synthdata import PHOTO, gen_scene, gen_subject_image

ws = Workspace("demos/_out/workspace")
# insert jobs only need an insertion model; untrained ones warn+passthrough
if not ws.hub.has("insertion"):
    ws.hub.put("insertion", InsertionModel(default_insertion_arch(64, 16)).to_bytes())

app = create_app(ws)
client = TestClient(app)

# 1. upload assets (content addressed: the hash is the id)
subject, _, noun, _ = gen_subject_image(seed=12)
target = gen_scene(PHOTO, seed=44).clean
subject_hash = client.post("/api/assets", content=png_bytes(subject)).json()["hash"]
target_hash = client.post("/api/assets", content=png_bytes(target)).json()["hash"]
print("uploaded:", subject_hash[:12], target_hash[:12])

# 2. submit an insert job with a placement (what a canvas drag produces)
payload = {"v": 1, "kind": "insert",
           "inputs": {"subject_asset": subject_hash, "target_asset": target_hash,
                      "placement": {"x": 40, "y": 44, "scale": 0.8}, "seed": 7}}
job_id = client.post("/api/jobs", json=payload).json()["id"]

# 3. poll until done (the studio does the same every 2 s)
import time
while True:
    job = client.get(f"/api/jobs/{job_id}").json()
    if job["state"] in ("done", "failed"):
        break
    time.sleep(0.05)
print("job state:", job["state"], "| artifacts:", sorted(job["artifacts"]))

# 4. fetch the produced image by hash
final = client.get(f"/api/assets/{job['artifacts']['final_png']}")
open("demos/_out/service_final.png", "wb").write(final.content)
print("final image written to demos/_out/service_final.png")

# validation errors come back structured, with field paths
bad = client.post("/api/jobs", json={"v": 1, "kind": "insert", "inputs": {}})
print("validation error fields:",
      [d["field"] for d in bad.json()["details"]["fields"]])

app.state.queue.shutdown()
