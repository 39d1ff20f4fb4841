"""Validate experiment configs against schema/experiment.schema.json."""

import json
import sys
from pathlib import Path

import jsonschema

root = Path(__file__).resolve().parent.parent
schema = json.loads((root / "schema" / "experiment.schema.json").read_text())
paths = [Path(p) for p in sys.argv[1:]] or sorted((root / "configs").glob("*.json"))
failed = 0
for path in paths:
    errors = list(jsonschema.Draft202012Validator(schema).iter_errors(json.loads(path.read_text())))
    for e in errors:
        print(f"{path.name}: {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}")
    failed += bool(errors)
print(f"{len(paths) - failed} of {len(paths)} configs valid")
sys.exit(1 if failed else 0)
