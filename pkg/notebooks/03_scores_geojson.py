"""
County latent scores and a GeoJSON join
=======================================

After fitting, every county with complete data gets a score on each
latent variable. The default is the regression method: the model-implied
covariance between latents and observed variables, times the inverse
implied covariance, applied to centred data. Scores are written in map
order (climate risk first, then dimensions by the size of their path)
and can be attached to a county FeatureCollection for mapping.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from flourishsem.datamodel import CountyId, ObservedTable
from flourishsem.scoring import export_scores, factor_scores, score_order, score_weights
from flourishsem.sem import SampleMoments, fit, load_model
from flourishsem.synth import default_truth, generate_observations, synthetic_fips

spec = load_model()
truth = default_truth(spec)
data, _ = generate_observations(spec, truth, 400, seed=3)
counties = tuple(CountyId(synthetic_fips(i)) for i in range(400))
table = ObservedTable(counties, spec.observed, data)

result = fit(spec, SampleMoments.from_data(data, spec.observed, counties))
scores = factor_scores(result.estimates, table)
print(scores.values.shape, "largest |mean score|:", np.abs(scores.values.mean(axis=0)).max())

###############################################################################
# Regression scores shrink toward zero: their covariance is W Sigma_lo'
# rather than the latent covariance itself.

w = score_weights(result.estimates)
lo = result.estimates.matrices().latent_observed_covariance()
print("implied score variances:", np.round(np.diag(w @ lo.T), 3))
print("latent variances:       ", np.round(np.diag(result.estimates.matrices().latent_covariance()), 3))

###############################################################################
# Export with a toy geometry covering the first five counties plus one
# county that has no data; the join report counts that gap.

order = score_order(spec, result.standardized)
print("column order:", order)
out = Path(tempfile.mkdtemp())
features = [{"type": "Feature", "properties": {"GEOID": c.fips},
             "geometry": {"type": "Point", "coordinates": [-95.0 + i, 30.0]}}
            for i, c in enumerate(counties[:5] + (CountyId("99999"),))]
(out / "counties.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": features}))
report = export_scores(scores, spec, result.standardized, out / "scores.csv",
                       out / "counties.geojson", out / "scores.geojson")
print(f"{report.matched} of {report.features} features matched, gaps: {report.gaps}, "
      f"{len(report.unmatched_scores)} scored counties outside the geometry")
print((out / "scores.csv").read_text().splitlines()[0])
