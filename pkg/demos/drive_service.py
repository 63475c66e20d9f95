#!/usr/bin/env python3
"""Drive the review service the way the browser UI does, start to finish.

The service is hosted in-process here (no port, no subprocess) via the ASGI
test client, so this script is also a faithful sketch of what any HTTP client
sees: create a session, poll for the next sample, post corrected masks, read
the running report. For a real deployment use `hitta serve` and point the
bundled web UI (or curl) at it.

Reuses the toy artifacts from quickstart.py — run that first.
"""

from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from hitta.config import RunConfig
from hitta.datagen import SyntheticDataset
from hitta.feedback_adapt import PostAdaptConfig
from hitta.objectives import dsc
from hitta.pre_adapt import PreAdaptConfig
from hitta.rle import decode_mask, encode_mask
from hitta.service import create_app

ROOT = Path(__file__).resolve().parent / "_artifacts" / "quickstart"


def main() -> None:
    if not (ROOT / "checkpoint.zip").exists():
        raise SystemExit("run demos/quickstart.py first to create the toy artifacts")

    dataset = SyntheticDataset(ROOT / "data")
    run = RunConfig(
        dataset_root=str(ROOT / "data"),
        checkpoint=str(ROOT / "checkpoint.zip"),
        out_dir="unused",
        seed=0,
        domains=("targetA", "targetB"),
        limit=2,
        pre=PreAdaptConfig(steps=5, b=3),
        post=PostAdaptConfig(steps=5, b=3),
    )

    with TestClient(create_app(ROOT / "service_state")) as client:
        print("POST /sessions")
        created = client.post("/sessions", json={"method": "hitta", "config": run.to_dict()}).json()
        sid = created["session_id"]
        print(f"  session {sid}: {created['stream_length']} samples queued\n")

        while True:
            payload = client.get(f"/sessions/{sid}/next").json()
            if payload.get("done"):
                print("stream exhausted")
                break
            masks = {tag: decode_mask(m) for tag, m in payload["masks"].items()}
            print(
                f"sample {payload['sample_id']} ({payload['domain']}, reviewer {payload['rater']}): "
                f"heads presented: {sorted(masks)}"
            )

            # Stand-in for the human: prefer whichever head matches the
            # reviewer's own reading better, then submit that reading as the
            # corrected mask.
            record = next(
                r for r in dataset.records(payload["domain"]) if r["id"] == payload["sample_id"]
            )
            reference = dataset.load(record).rater_masks[payload["rater"]]
            chosen = "main"
            if "pref" in masks and dsc(masks["pref"], reference).mean > dsc(masks["main"], reference).mean:
                chosen = "pref"
            ack = client.post(
                f"/sessions/{sid}/feedback",
                json={"chosen_head": chosen, "mask": encode_mask(reference)},
            ).json()
            running = ack["running"]
            print(
                f"  chose {chosen}; adaptation ran "
                f"({len(ack['loss_trace'])} steps); running mean vs-R* over "
                f"{running['n']} samples: {running['vs_rstar']:.3f}"
            )

        report = client.get(f"/sessions/{sid}/report").json()
        overall = report["aggregate"]["overall"]
        print(
            f"\nfinal report: {overall['n']} samples, "
            f"mean DSC vs R1 {overall['vs_r1']:.3f}, vs R* {overall['vs_rstar']:.3f}"
        )
        print(f"session state persists under {ROOT / 'service_state'} (crash-safe, resumable)")


if __name__ == "__main__":
    main()
