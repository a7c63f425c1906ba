import io
import time

import cv2
import numpy as np
import pytest
from fastapi.testclient import TestClient

from thermoseg.service import ServiceConfig, create_app
from thermoseg.service.demo import build_demo_registry


@pytest.fixture(scope="module")
def service_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    registry, train, test = build_demo_registry(
        root / "registry", n_train=6, n_test=3, seed=0, scene_size=160
    )
    return root, registry, train, test


def make_config(root, suffix=""):
    return ServiceConfig(
        store_dir=root / f"store{suffix}", registry_dir=root / "registry"
    )


def wait_done(client, job_id, timeout=15.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/v1/jobs/{job_id}").json()
        if doc["status"] in ("done", "failed"):
            return doc
        time.sleep(0.02)
    raise TimeoutError(f"job {job_id} never finished")


def scene_bytes(root, name="scene_00001.png", split="test"):
    return (root / "registry" / "data" / split / name).read_bytes()


def upload(client, data, **params):
    return client.post(
        "/api/v1/jobs", files={"image": ("upload.png", data, "image/png")}, params=params
    )


class TestSubmitAndPoll:
    def test_valid_upload_runs_to_done(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "a"))) as client:
            r = upload(client, scene_bytes(root))
            assert r.status_code == 200
            job_id = r.json()["job_id"]
            assert r.json()["status"] == "queued"
            doc = wait_done(client, job_id)
            assert doc["status"] == "done"
            payload = doc["payload"]
            assert payload["predictions"]
            scores = [p["score"] for p in payload["predictions"]]
            assert scores == sorted(scores, reverse=True)
            assert all(p["accepted"] for p in payload["predictions"])

    def test_corrupt_upload_rejected_without_job(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "b"))) as client:
            r = upload(client, b"not a png at all")
            assert r.status_code == 422
            store_dir = make_config(root, "b").store_dir
            assert list((store_dir / "jobs").iterdir()) == []

    def test_unknown_model_404(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "c"))) as client:
            r = upload(client, scene_bytes(root), model="M99")
            assert r.status_code == 404

    def test_bad_threshold_422(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "d"))) as client:
            r = upload(client, scene_bytes(root), threshold=1.5)
            assert r.status_code == 422

    def test_unknown_job_404(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "e"))) as client:
            assert client.get("/api/v1/jobs/doesnotexist").status_code == 404

    def test_fifo_completion_order(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "f"))) as client:
            ids = []
            for name in ("scene_00001.png", "scene_00002.png", "scene_00003.png"):
                ids.append(upload(client, scene_bytes(root, name)).json()["job_id"])
            docs = [wait_done(client, job_id) for job_id in ids]
            finished = [doc["finished_at"] for doc in docs]
            assert finished == sorted(finished)
            assert len(set(ids)) == 3


class TestReview:
    def test_all_accepted_identical_payload(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "g"))) as client:
            job_id = upload(client, scene_bytes(root)).json()["job_id"]
            doc = wait_done(client, job_id)
            payload = doc["payload"]
            decisions = [
                {"prediction_index": p["index"], "accepted": True}
                for p in payload["predictions"]
            ]
            reviewed = client.post(
                f"/api/v1/jobs/{job_id}/review", json={"decisions": decisions}
            ).json()
            assert reviewed == payload

    def test_reject_all_restores_source(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "h"))) as client:
            source = scene_bytes(root)
            job_id = upload(client, source).json()["job_id"]
            payload = wait_done(client, job_id)["payload"]
            decisions = [
                {"prediction_index": p["index"], "accepted": False}
                for p in payload["predictions"]
            ]
            reviewed = client.post(
                f"/api/v1/jobs/{job_id}/review", json={"decisions": decisions}
            ).json()
            assert reviewed["crops"] == []
            cleaned = client.get(f"/api/v1/jobs/{job_id}/cleaned").content
            cleaned_arr = cv2.imdecode(np.frombuffer(cleaned, np.uint8), cv2.IMREAD_GRAYSCALE)
            source_arr = cv2.imdecode(np.frombuffer(source, np.uint8), cv2.IMREAD_GRAYSCALE)
            assert np.array_equal(cleaned_arr, source_arr)

    def test_reject_one_obstructive_restores_its_pixels(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "i"))) as client:
            source = scene_bytes(root)
            source_arr = cv2.imdecode(np.frombuffer(source, np.uint8), cv2.IMREAD_GRAYSCALE)
            job_id = upload(client, source).json()["job_id"]
            payload = wait_done(client, job_id)["payload"]
            obstructive = [
                p for p in payload["predictions"] if p["role"] == "obstructive"
            ]
            if not obstructive:
                pytest.skip("scene produced no obstructive predictions")
            target = obstructive[0]
            reviewed = client.post(
                f"/api/v1/jobs/{job_id}/review",
                json={"decisions": [{"prediction_index": target["index"], "accepted": False}]},
            ).json()
            assert reviewed["predictions"][target["index"]]["accepted"] is False
            cleaned = client.get(f"/api/v1/jobs/{job_id}/cleaned").content
            cleaned_arr = cv2.imdecode(np.frombuffer(cleaned, np.uint8), cv2.IMREAD_GRAYSCALE)
            from thermoseg.geometry import RLEMask, rle_to_mask

            mask = rle_to_mask(RLEMask.from_coco(target["mask"]))
            other = np.zeros_like(mask)
            for p in payload["predictions"]:
                if p["role"] == "obstructive" and p["index"] != target["index"]:
                    other |= rle_to_mask(RLEMask.from_coco(p["mask"]))
            restored = mask & ~other
            assert np.array_equal(cleaned_arr[restored], source_arr[restored])

    def test_review_requires_done(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "j"))) as client:
            r = client.post("/api/v1/jobs/nothere/review", json={"decisions": []})
            assert r.status_code == 404

    def test_review_determinism(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "k"))) as client:
            job_id = upload(client, scene_bytes(root)).json()["job_id"]
            payload = wait_done(client, job_id)["payload"]
            decisions = [
                {"prediction_index": p["index"], "accepted": p["index"] % 2 == 0}
                for p in payload["predictions"]
            ]
            first = client.post(
                f"/api/v1/jobs/{job_id}/review", json={"decisions": decisions}
            ).json()
            first_cleaned = client.get(f"/api/v1/jobs/{job_id}/cleaned").content
            second = client.post(
                f"/api/v1/jobs/{job_id}/review", json={"decisions": decisions}
            ).json()
            second_cleaned = client.get(f"/api/v1/jobs/{job_id}/cleaned").content
            assert first == second
            assert first_cleaned == second_cleaned


class TestDurabilityAndModels:
    def test_done_jobs_survive_restart(self, service_env):
        root, *_ = service_env
        config = make_config(root, "l")
        with TestClient(create_app(config)) as client:
            job_id = upload(client, scene_bytes(root)).json()["job_id"]
            before = wait_done(client, job_id)
        with TestClient(create_app(make_config(root, "l"))) as client:
            after = client.get(f"/api/v1/jobs/{job_id}").json()
            assert after["status"] == "done"
            assert after["payload"] == before["payload"]

    def test_idempotent_reads(self, service_env):
        root, *_ = service_env
        with TestClient(create_app(make_config(root, "m"))) as client:
            job_id = upload(client, scene_bytes(root)).json()["job_id"]
            wait_done(client, job_id)
            a = client.get(f"/api/v1/jobs/{job_id}").json()
            b = client.get(f"/api/v1/jobs/{job_id}").json()
            assert a == b

    def test_models_listing_flags_default(self, service_env):
        root, registry, *_ = service_env
        with TestClient(create_app(make_config(root, "n"))) as client:
            models = client.get("/api/v1/models").json()
            assert len(models) == len(registry.entries)
            defaults = [m for m in models if m["default"]]
            assert len(defaults) == 1

    def test_crops_zip_matches_payload(self, service_env):
        import zipfile

        root, *_ = service_env
        with TestClient(create_app(make_config(root, "o"))) as client:
            job_id = upload(client, scene_bytes(root)).json()["job_id"]
            payload = wait_done(client, job_id)["payload"]
            archive = client.get(f"/api/v1/jobs/{job_id}/crops")
            with zipfile.ZipFile(io.BytesIO(archive.content)) as z:
                names = set(z.namelist())
            assert "metadata.json" in names
            for crop in payload["crops"]:
                assert crop["file"].split("/")[-1] in names


class TestStoreAndConfig:
    def test_illegal_status_transition_rejected(self, tmp_path):
        from thermoseg.service.store import JobStore

        store = JobStore(tmp_path)
        record = store.create(np.zeros((8, 8), np.uint8), "M1", 0.5)
        with pytest.raises(ValueError):
            store.transition(record.job_id, "done")  # queued -> done skips running
        store.transition(record.job_id, "running")
        store.transition(record.job_id, "done")
        with pytest.raises(ValueError):
            store.transition(record.job_id, "running")

    def test_interrupted_running_job_fails_on_restart(self, service_env):
        root, *_ = service_env
        config = make_config(root, "p")
        from thermoseg.service.store import JobStore

        store = JobStore(config.store_dir)
        record = store.create(np.zeros((8, 8), np.uint8), "M12", 0.5)
        store.transition(record.job_id, "running")
        with TestClient(create_app(config)) as client:
            doc = client.get(f"/api/v1/jobs/{record.job_id}").json()
            assert doc["status"] == "failed"
            assert "restart" in doc["error"]

    def test_config_file_with_env_overrides(self, tmp_path):
        import json

        cfg_path = tmp_path / "service.json"
        cfg_path.write_text(
            json.dumps({"store_dir": str(tmp_path / "a"), "registry_dir": str(tmp_path / "b")})
        )
        config = ServiceConfig.load(
            cfg_path,
            env={"THERMOSEG_WORKERS": "3", "THERMOSEG_THRESHOLD": "0.25",
                 "THERMOSEG_DEFAULT_MODEL": "M4"},
        )
        assert config.worker_count == 3
        assert config.score_threshold == 0.25
        assert config.default_model == "M4"
        assert config.store_dir == tmp_path / "a"

    def test_config_requires_directories(self):
        with pytest.raises(ValueError):
            ServiceConfig.load(None, env={})
