"""Regenerate golden_report.json from the bundled demo fixture.

Run after any intentional change to the demo fixture or the report
format, then re-review the numbers by hand before committing.
"""

import shutil
import tempfile
from pathlib import Path

from proctext.pipeline import run_pipeline
from proctext.synthetic import make_demo_fixture


def main() -> None:
    fixtures = Path(__file__).parent
    with tempfile.TemporaryDirectory() as tmp:
        paths = make_demo_fixture(Path(tmp) / "fixture")
        result = run_pipeline(paths["config"], Path(tmp) / "run")
        shutil.copy(result.artifacts["evaluate"], fixtures / "golden_report.json")
    print(f"wrote {fixtures / 'golden_report.json'}")


if __name__ == "__main__":
    main()
