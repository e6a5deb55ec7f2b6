#!/usr/bin/env python3
"""Smoke test for the otascope_py extension module.

Builds the cdylib with cargo, loads it, and exercises the main entry points
end to end: keyword scanning, the cipher catalog, scenario synthesis, dataset
extraction, store access, and report generation.

Run from anywhere:  python3 python/smoke_test.py
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def build_extension(workdir: Path) -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "otascope-py"],
        cwd=REPO_ROOT,
        check=True,
    )
    built = REPO_ROOT / "target" / "debug" / "libotascope_py.so"
    if not built.exists():  # macOS fallback
        built = REPO_ROOT / "target" / "debug" / "libotascope_py.dylib"
    target = workdir / "otascope_py.so"
    shutil.copy2(built, target)
    return target


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="otascope-smoke-"))
    build_extension(workdir)
    sys.path.insert(0, str(workdir))
    import otascope_py as ota

    # Keyword scanning: str and bytes, counts are case-insensitive and
    # non-overlapping per keyword.
    got = ota.scan_keywords("Firmware-Update available; no updates queued")
    assert got == {"firmware": 1, "update": 2}, got
    assert ota.scan_keywords(b"no matches here") == {}
    assert ota.scan_keywords("xULXULup", keywords=["ulxul"]) == {"ulxul": 1}
    corpus = ota.default_keywords()
    assert corpus == ["update", "upgrade", "firmware", "software", "download"], corpus

    # Cipher catalog.
    catalog = ota.CipherCatalog.bundled()
    assert len(catalog) > 0
    assert catalog.snapshot_date
    rec = catalog.lookup(0x1301)
    assert rec["name"] == "TLS_AES_128_GCM_SHA256", rec
    assert rec["class"] == "Recommended" and rec["pfs"] is True
    assert catalog.lookup(0xFFFF) is None
    assert catalog.disposition(0x0A0A) == "grease"
    assert catalog.disposition(0x00FF) == "signaling"
    counts = catalog.class_counts()
    assert set(counts) == {"Insecure", "Weak", "Secure", "Recommended"}, counts

    # Scenario corpus -> extraction -> store -> reports.
    names = ota.list_scenarios()
    assert "nosec-update" in names and len(names) >= 12, names
    dataset = workdir / "fixtures"
    capture_ids = ota.synth_scenarios(str(dataset))
    assert len(capture_ids) == len(names)

    out = workdir / "run"
    stats = ota.extract_dataset(str(dataset), str(out), workers=2)
    assert stats["captures"] == len(names) and stats["failed"] == 0, stats
    assert stats["flagged_captures"] > 0

    store = ota.Store.open(stats["store"])
    assert "captures" in store.tables()
    dump = store.dump_table("captures")
    assert dump.splitlines()[0].startswith("capture_id\t")
    assert "tool_version" in store.run_info()

    files = ota.write_report_files(stats["store"], str(out), format="csv")
    assert len(files) == 5, files
    reports = json.loads((out / "device_reports.json").read_text())
    by_device = {r["device"]: r for r in reports}
    assert by_device["nosec-update"]["pattern"] == "NoSecurity"
    assert by_device["full-tls"]["pattern"] == "FullTls"
    assert by_device["downgrade-client"]["downgrade_vulnerable"] is True

    full = json.loads(ota.report_json(stats["store"]))
    assert full["run_summary"]["captures_total"] == len(names)

    # Single-capture analysis without a store.
    nosec = next(c for c in capture_ids if "nosec-update" in c)
    one = ota.analyze_capture(str(dataset / nosec))
    assert one["capture"]["flagged"] is True
    kinds = {e["kind"] for e in one["evidence"]}
    assert {"FirmwareUrl", "FirmwarePayload"} <= kinds, kinds

    print("smoke test passed")


if __name__ == "__main__":
    main()
