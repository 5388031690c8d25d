from dataclasses import replace

from imprsl.harness import scenario, tasks


def truncate_trial(trial: scenario.Trial, seconds: float) -> scenario.Trial:
    """The first ``seconds`` of a trial after its settling pre-roll."""
    n = trial.n_settle + int(round(seconds / scenario.CONTROL_DT)) + 1
    per_step = int(round(tasks.EMG_RATE * scenario.CONTROL_DT))
    m = n * per_step
    return replace(trial, t=trial.t[:n], partner_path=trial.partner_path[:n], partner_vel=trial.partner_vel[:n],
                   partner_activation=trial.partner_activation[:n], raw_bb=trial.raw_bb[:m], raw_tb=trial.raw_tb[:m])
