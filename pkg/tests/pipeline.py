"""Rebuild observations from a simulated signal stream the way the CLI does."""
from undercrowd import aggregate, ingest, synth, validate


def rebuild(data: synth.SynthData, signals=None):
    """Signals -> rides -> validation -> aggregation -> observations.

    Returns (observations, aggregates, rejection report).
    """
    scn = data.scenario
    if signals is None:
        signals, _ = synth.emit_signals(data)
    rides = ingest.reconstruct_rides(signals, scn.route, scn.capacities)
    assessed, _ = validate.assess_rides(rides, scn.route)
    kept, report = validate.filter_rides(assessed)
    aggs = aggregate.aggregate_rides(kept, scn.n_segments)
    obs = aggregate.join_covariates(aggs, data.weather, data.calendar, aggregate.ThresholdConfig(scn.c_low))
    return obs, aggs, report
