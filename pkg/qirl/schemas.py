from marshmallow import Schema, ValidationError, fields, post_load, validate, validates_schema

from .config import EvalConfig, ExpertConfig, PlannerConfig, RunConfig, TrainerConfig
from .features import N_AUGMENTED, N_FEATURES
from .models import AgentSpec, Obstacle, Road, Scenario, Terminal, Vehicle
from .reward import LINEAR, MLP

SCHEMA_VERSION = 1

_positive = validate.Range(min=0, min_inclusive=False)
_non_negative = validate.Range(min=0)


class RoadSchema(Schema):
    lane_count = fields.Int(required=True, validate=validate.Range(min=1))
    lane_width = fields.Float(required=True, validate=_positive)
    length = fields.Float(required=True, validate=_positive)

    @post_load
    def make(self, data, **kwargs):
        return Road(**data)


class VehicleSchema(Schema):
    length = fields.Float(validate=_positive)
    width = fields.Float(validate=_positive)
    ax_max = fields.Float(validate=_positive)
    vy_max = fields.Float(validate=_positive)

    @post_load
    def make(self, data, **kwargs):
        return Vehicle(**data)


class AgentSpecSchema(Schema):
    mean_x = fields.Float(required=True)
    mean_y = fields.Float(required=True)
    std_x = fields.Float(load_default=0.0, validate=_non_negative)
    std_y = fields.Float(load_default=0.0, validate=_non_negative)
    start_speed = fields.Float(required=True, validate=_non_negative)
    desired_lane = fields.Int(required=True, validate=_non_negative)
    desired_velocity = fields.Float(required=True, validate=_positive)

    @post_load
    def make(self, data, **kwargs):
        return AgentSpec(**data)


class ObstacleSchema(Schema):
    x = fields.Float(required=True)
    y = fields.Float(required=True)
    length = fields.Float(required=True, validate=_positive)
    width = fields.Float(required=True, validate=_positive)

    @post_load
    def make(self, data, **kwargs):
        return Obstacle(**data)


class ScenarioSchema(Schema):
    schema_version = fields.Int(required=True, validate=validate.OneOf([SCHEMA_VERSION]))
    name = fields.Str(required=True, validate=validate.Length(min=1, max=100))
    road = fields.Nested(RoadSchema, required=True)
    vehicle = fields.Nested(VehicleSchema)
    agents = fields.List(fields.Nested(AgentSpecSchema), required=True, validate=validate.Length(min=1))
    obstacles = fields.List(fields.Nested(ObstacleSchema), load_default=list)
    horizon = fields.Int(load_default=13, validate=_non_negative)
    dt = fields.Float(load_default=0.8, validate=_positive)

    @validates_schema
    def validate_desired_lanes(self, data, **kwargs):
        road, agents = data.get('road'), data.get('agents') or []
        if road is None:
            return
        for i, spec in enumerate(agents):
            if spec.desired_lane >= road.lane_count:
                raise ValidationError(
                    f'agent {i}: desired lane {spec.desired_lane} outside road of {road.lane_count} lanes', 'agents')

    @post_load
    def make(self, data, **kwargs):
        data.pop('schema_version')
        data['agents'] = tuple(data['agents'])
        data['obstacles'] = tuple(data['obstacles'])
        return Scenario(**data)


class PlannerSchema(Schema):
    budget = fields.Int(validate=validate.Range(min=1))
    c = fields.Float(validate=_positive)
    gamma = fields.Float(validate=validate.Range(min=0, max=1, min_inclusive=False))
    uct_c = fields.Float(validate=_non_negative)
    pw_k = fields.Float(validate=_positive)
    pw_alpha = fields.Float(validate=validate.Range(min=0, max=1))
    accel_template = fields.List(fields.Float(), validate=validate.Length(min=1))
    lane_change_time = fields.Float(validate=_positive)
    jitter_std = fields.Float(validate=_non_negative)

    @post_load
    def make(self, data, **kwargs):
        if 'accel_template' in data:
            data['accel_template'] = tuple(data['accel_template'])
        return PlannerConfig(**data)


class TrainerSchema(Schema):
    model = fields.Str(validate=validate.OneOf([LINEAR, MLP]))
    hidden_dim = fields.Int(validate=validate.Range(min=1))
    learning_rate = fields.Float(validate=_positive)
    outer_steps = fields.Int(validate=_non_negative)
    samples_per_step = fields.Int(validate=validate.Range(min=1))
    eval_every = fields.Int(validate=_non_negative)
    eval_samples = fields.Int(validate=validate.Range(min=1))
    k = fields.Int(validate=validate.Range(min=1))

    @post_load
    def make(self, data, **kwargs):
        return TrainerConfig(**data)


class ExpertSchema(Schema):
    count = fields.Int(validate=_non_negative)
    budget = fields.Int(allow_none=True, validate=validate.Range(min=1))
    baseline_weights = fields.List(fields.Float(), validate=validate.Length(equal=N_FEATURES))

    @post_load
    def make(self, data, **kwargs):
        if 'baseline_weights' in data:
            data['baseline_weights'] = tuple(data['baseline_weights'])
        return ExpertConfig(**data)


class EvalSchema(Schema):
    k = fields.Int(validate=validate.Range(min=1))
    velocity_band = fields.Float(validate=_positive)
    samples = fields.Int(validate=validate.Range(min=1))

    @post_load
    def make(self, data, **kwargs):
        return EvalConfig(**data)


class RunConfigSchema(Schema):
    scenarios = fields.List(fields.Str(validate=validate.Length(min=1)), required=True,
                            validate=validate.Length(min=1))
    planner = fields.Nested(PlannerSchema)
    trainer = fields.Nested(TrainerSchema)
    experts = fields.Nested(ExpertSchema)
    eval = fields.Nested(EvalSchema)
    output_dir = fields.Str(allow_none=True)
    seed = fields.Int(allow_none=True, validate=validate.Range(min=0, max=2 ** 64 - 1))
    workers = fields.Int(allow_none=True, validate=validate.Range(min=1))

    @validates_schema
    def validate_k(self, data, **kwargs):
        experts = data.get('experts')
        for section in ('trainer', 'eval'):
            cfg = data.get(section)
            if experts is not None and cfg is not None and 0 < experts.count < cfg.k:
                raise ValidationError(f'{section}.k={cfg.k} exceeds experts.count={experts.count}', section)

    @post_load
    def make(self, data, **kwargs):
        data['scenarios'] = tuple(data['scenarios'])
        return RunConfig(**data)


class CheckpointSchema(Schema):
    kind = fields.Str(required=True, validate=validate.OneOf([LINEAR, MLP]))
    input_dim = fields.Int(required=True)
    hidden_dim = fields.Int(allow_none=True, validate=validate.Range(min=1))
    # row-major parameter arrays keyed by name: theta, or w1 and w2
    params = fields.Dict(keys=fields.Str(), values=fields.Raw(), required=True)
    step = fields.Int(load_default=0, validate=_non_negative)
    label = fields.Str(allow_none=True)

    @validates_schema
    def validate_shapes(self, data, **kwargs):
        kind, params = data.get('kind'), data.get('params') or {}
        if kind == LINEAR:
            if data.get('input_dim') != N_FEATURES:
                raise ValidationError(f'linear checkpoints take {N_FEATURES} inputs', 'input_dim')
            if set(params) != {'theta'}:
                raise ValidationError('linear checkpoints carry exactly "theta"', 'params')
        elif kind == MLP:
            if data.get('input_dim') != N_AUGMENTED:
                raise ValidationError(f'mlp checkpoints take {N_AUGMENTED} inputs', 'input_dim')
            if set(params) != {'w1', 'w2'}:
                raise ValidationError('mlp checkpoints carry exactly "w1" and "w2"', 'params')
            if data.get('hidden_dim') is None:
                raise ValidationError('mlp checkpoints need hidden_dim', 'hidden_dim')


class TrajectoryHeaderSchema(Schema):
    record = fields.Str(required=True, validate=validate.OneOf(['header']))
    schema_version = fields.Int(required=True, validate=validate.OneOf([SCHEMA_VERSION]))
    scenario = fields.Str(required=True)
    source = fields.Str(required=True, validate=validate.OneOf(['expert', 'sample']))
    seed = fields.Int(required=True)
    count = fields.Int(required=True, validate=_non_negative)
    horizon = fields.Int(required=True, validate=_non_negative)
    dt = fields.Float(required=True, validate=_positive)


class TrajectoryRecordSchema(Schema):
    record = fields.Str(required=True, validate=validate.OneOf(['trajectory']))
    agent_id = fields.Int(required=True, validate=_non_negative)
    episode = fields.Int(required=True, validate=_non_negative)
    seed = fields.Int(allow_none=True)
    start = fields.List(fields.Float(), required=True, validate=validate.Length(equal=3))  # x, y, v
    steps = fields.List(fields.List(fields.Float(), validate=validate.Length(equal=5)),
                        required=True)  # x, y, v, ax, vy
    terminal = fields.Str(required=True, validate=validate.OneOf([t.value for t in Terminal]))
    log_prob = fields.Float(allow_none=True)
