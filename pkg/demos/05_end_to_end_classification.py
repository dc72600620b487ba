"""
End-to-end zero-shot classification
===================================

The full engine on the bundled reference world: a tiny deterministic
encoder pair, a three-class synthetic dataset, and a description catalog
embedded in the same space.  Real deployments swap the backend
directories for exported model graphs and the catalog for one built from
LLM description sets; nothing else changes.
"""

from pathlib import Path

from abselect import load_backend, load_catalog, load_image
from abselect.pipeline import Backends, RunConfig, evaluate_dataset, run_image

WORLD = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "world"

backends = Backends(
    embedding=load_backend(WORLD / "models" / "embedding"),
    attention=load_backend(WORLD / "models" / "attention"),
)
catalog = load_catalog(WORLD / "catalog.json")
config = RunConfig(alpha=0.5, beta=0.9, k=5, n_crops=6, tau=0.01, seed=42, branches="both")

image = load_image(WORLD / "dataset" / "stripes" / "img_01.png")
result = run_image(image, config, backends, catalog, image_id="stripes/img_01.png")
print(f"single image: predicted {result.predicted!r} with margin {result.margin:.3f}")
print(f"  scores: " + ", ".join(f"{k}={v:.3f}" for k, v in result.class_scores.items()))
print(f"  stage times (ms): " + ", ".join(f"{k}={v:.1f}" for k, v in result.timing_ms.items()))

report = evaluate_dataset(WORLD / "dataset", config, backends, catalog, workers=4)
print(f"dataset: {report.correct}/{report.image_count} correct "
      f"(top-1 {report.top1_accuracy:.2%}) in {report.wall_time_s:.2f}s")
for name, stats in report.per_class.items():
    print(f"  {name}: {stats['correct']}/{stats['count']}")
