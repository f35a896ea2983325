from rest_framework import serializers

from .dynamics import DEFAULT_V_MAX
from .exceptions import ConfigurationError
from .fields import FIELD_BUILDERS, METRIC_NAMES, build_field, build_form, build_metric

SCHEMA_VERSION = 1

SUBCOMMANDS = (
    "geometry-check",
    "flow",
    "jacobi",
    "riccati-compare",
    "weakkam-solve",
    "barrier",
    "aubry",
    "quotient",
    "hodge",
    "verify",
)

THEOREMS = ("1.5", "1.6", "1.7", "1.8", "1.9", "riccati", "index")


class FieldSerializer(serializers.Serializer):
    """Serializer for a built-in scalar field reference."""

    name = serializers.ChoiceField(choices=sorted(FIELD_BUILDERS))
    params = serializers.JSONField(required=False, default=dict)

    def validate_params(self, value):
        """Validate that parameters form an object."""
        if not isinstance(value, dict):
            raise serializers.ValidationError("Field parameters must be an object.")
        return value


class MetricSerializer(serializers.Serializer):
    """Serializer for a built-in metric reference."""

    name = serializers.ChoiceField(choices=list(METRIC_NAMES), default="flat")
    params = serializers.JSONField(required=False, default=dict)
    derivative_scheme = serializers.ChoiceField(
        choices=["analytic", "finite_difference"], default="analytic"
    )
    step = serializers.FloatField(min_value=1e-10, default=1e-5)


class ManifoldSerializer(serializers.Serializer):
    """Serializer for the chart torus and its metric."""

    dim = serializers.IntegerField(min_value=2, max_value=4)
    metric = MetricSerializer()

    def validate(self, data):
        """Validate that the metric resolves to a built-in."""
        try:
            build_metric(dict(data["metric"]), data["dim"])
        except ConfigurationError as exc:
            raise serializers.ValidationError({"metric": str(exc)})
        return data


class FormSerializer(serializers.Serializer):
    """Serializer for a closed 1-form Σ c_i dx_i + dφ."""

    constants = serializers.ListField(child=serializers.FloatField(), min_length=1)
    phi = FieldSerializer(required=False, allow_null=True, default=None)


class LagrangianSerializer(serializers.Serializer):
    """Serializer for L = ½g(v, v) − f − ω(v) + c."""

    f = FieldSerializer(required=False, allow_null=True, default=None)
    omega = FormSerializer()
    c = serializers.FloatField(default=0.0)
    mane = serializers.BooleanField(default=False)
    v_max = serializers.FloatField(min_value=0.0, default=DEFAULT_V_MAX)

    def validate(self, data):
        """Validate that a Mañé Lagrangian carries no separate potential."""
        f = data.get("f")
        if data.get("mane") and f and f.get("name") != "zero":
            raise serializers.ValidationError(
                {"f": "The Mañé Lagrangian takes its potential from omega."}
            )
        return data


class GridSerializer(serializers.Serializer):
    """Serializer for the Lax-Oleinik lattice."""

    N = serializers.IntegerField(min_value=16)
    dt = serializers.FloatField()
    stencil_r = serializers.IntegerField(min_value=1, default=3)

    def validate_dt(self, value):
        """Validate that the time step is positive."""
        if not value > 0:
            raise serializers.ValidationError("dt must be positive.")
        return value


class SolverSerializer(serializers.Serializer):
    """Serializer for solver tolerances and the horizon ladder."""

    tol = serializers.FloatField(min_value=0.0, default=1e-9)
    residual_tol = serializers.FloatField(min_value=0.0, default=1e-6)
    max_iters = serializers.IntegerField(min_value=1, default=5000)
    horizons = serializers.ListField(
        child=serializers.FloatField(), min_length=1, default=[5.0, 10.0, 20.0, 40.0]
    )
    relaxation = serializers.FloatField(min_value=0.0, max_value=1.0, default=1.0)
    tol_A = serializers.FloatField(min_value=0.0, default=5e-3)
    tol_Q = serializers.FloatField(min_value=0.0, default=1e-2)
    hodge_tol = serializers.FloatField(min_value=0.0, default=1e-10)
    strict = serializers.BooleanField(default=False)

    def validate_horizons(self, value):
        """Validate that horizons are positive and increasing."""
        if any(t <= 0 for t in value) or sorted(value) != list(value):
            raise serializers.ValidationError("Horizons must be positive and increasing.")
        return value

    def validate_relaxation(self, value):
        """Validate that the relaxation keeps some of the new iterate."""
        if value == 0:
            raise serializers.ValidationError("Relaxation must be positive.")
        return value


class FlowSerializer(serializers.Serializer):
    """Serializer for single-trajectory experiments."""

    x = serializers.ListField(child=serializers.FloatField(), required=False)
    v = serializers.ListField(child=serializers.FloatField(), required=False)
    T = serializers.FloatField(default=10.0)
    dt = serializers.FloatField(min_value=1e-8, default=1e-3)
    energy_tol = serializers.FloatField(min_value=0.0, default=1e-8)
    synthetic_k = serializers.FloatField(required=False, allow_null=True, default=None)
    trajectories = serializers.IntegerField(min_value=1, default=20)


class RiccatiSerializer(serializers.Serializer):
    """Serializer for scalar Riccati comparison runs."""

    n = serializers.IntegerField(min_value=1, default=2)
    k = serializers.ListField(child=serializers.FloatField(), min_length=1, default=[-2.0, -1.0, 0.0])
    slack = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1, default=[0.0, 0.5])
    s0 = serializers.FloatField(default=1e-4)
    horizon = serializers.FloatField(default=20.0)
    samples = serializers.IntegerField(min_value=10, default=2000)

    def validate(self, data):
        """Validate the comparison interval."""
        if not 0 < data["s0"] < data["horizon"]:
            raise serializers.ValidationError("Need 0 < s0 < horizon.")
        return data


class ProbeSerializer(serializers.Serializer):
    """Serializer for support-function probes."""

    t_list = serializers.ListField(child=serializers.FloatField(), min_length=1, default=[1.0, 2.0, 4.0])
    points = serializers.IntegerField(min_value=1, default=10)
    m = serializers.IntegerField(min_value=1, default=3)
    slack = serializers.FloatField(min_value=0.0, default=0.1)
    samples = serializers.IntegerField(min_value=1, default=8)
    energy_T = serializers.FloatField(default=20.0)


class QuotientSerializer(serializers.Serializer):
    """Serializer for Aubry-set sampling."""

    stride = serializers.IntegerField(min_value=1, default=1)
    max_nodes = serializers.IntegerField(min_value=2, default=256)
    base = serializers.IntegerField(min_value=0, default=0)


OPTIONAL_SECTIONS = {
    "flow": FlowSerializer,
    "riccati": RiccatiSerializer,
    "probe": ProbeSerializer,
    "quotient": QuotientSerializer,
    "solver": SolverSerializer,
}


class ExperimentConfigSerializer(serializers.Serializer):
    """Serializer for one experiment configuration document."""

    experiment = serializers.CharField(max_length=120)
    output = serializers.CharField(required=False, allow_blank=True, default="")
    manifold = ManifoldSerializer()
    lagrangian = LagrangianSerializer()
    grid = GridSerializer()
    solver = SolverSerializer(required=False)
    flow = FlowSerializer(required=False)
    riccati = RiccatiSerializer(required=False)
    probe = ProbeSerializer(required=False)
    quotient = QuotientSerializer(required=False)

    def validate(self, data):
        """Cross-validate dimensions, built-in names and the stencil speed."""
        dim = data["manifold"]["dim"]
        lagrangian = data["lagrangian"]
        errors = {}
        try:
            build_form(_plain(lagrangian["omega"]), dim)
        except ConfigurationError as exc:
            errors["lagrangian"] = str(exc)
        try:
            build_field(_plain(lagrangian.get("f")), dim)
        except ConfigurationError as exc:
            errors["lagrangian"] = str(exc)
        grid = data["grid"]
        speed = grid["stencil_r"] / (grid["N"] * grid["dt"])
        if speed > lagrangian["v_max"]:
            errors["grid"] = f"Stencil speed r/(N·dt) = {speed:g} exceeds v_max = {lagrangian['v_max']:g}."
        flow = data.get("flow") or {}
        for key in ("x", "v"):
            if key in flow and len(flow[key]) != dim:
                errors["flow"] = f"flow.{key} needs {dim} components."
        if errors:
            raise serializers.ValidationError(errors)

        for name, serializer_class in OPTIONAL_SECTIONS.items():
            if data.get(name) is None:
                section = serializer_class(data={})
                section.is_valid(raise_exception=True)
                data[name] = section.validated_data
        return data


class CriterionSerializer(serializers.Serializer):
    """Serializer for one pass/fail criterion."""

    name = serializers.CharField()
    passed = serializers.BooleanField()
    value = serializers.FloatField(allow_null=True)
    tolerance = serializers.FloatField()
    detail = serializers.CharField(allow_blank=True, default="")


class RunSummarySerializer(serializers.Serializer):
    """Serializer for the RunSummary printed on standard output."""

    schema = serializers.IntegerField(default=SCHEMA_VERSION)
    experiment = serializers.CharField()
    subcommand = serializers.ChoiceField(choices=list(SUBCOMMANDS))
    theorem = serializers.ChoiceField(choices=list(THEOREMS), allow_null=True, default=None)
    inputs = serializers.JSONField()
    outputs = serializers.JSONField()
    criteria = CriterionSerializer(many=True)
    passed = serializers.BooleanField()
    exit_code = serializers.IntegerField(min_value=0, max_value=3)
    wall_clock = serializers.FloatField(min_value=0.0)
    version = serializers.CharField()
    artifacts = serializers.ListField(child=serializers.CharField())

    def validate(self, data):
        """Validate that the overall verdict agrees with the criteria."""
        if data["passed"] != all(item["passed"] for item in data["criteria"]):
            raise serializers.ValidationError("Overall verdict disagrees with the criteria.")
        return data


class RepresentativeSerializer(serializers.Serializer):
    """Serializer for one quotient component representative."""

    node = serializers.IntegerField(min_value=0)
    x = serializers.ListField(child=serializers.FloatField())


class QuotientReportSerializer(serializers.Serializer):
    """Serializer for the Mather quotient report."""

    aubry_count = serializers.IntegerField(min_value=1)
    sample_count = serializers.IntegerField(min_value=1)
    component_count = serializers.IntegerField(min_value=1)
    component_count_2tol = serializers.IntegerField(min_value=1)
    tol_A = serializers.FloatField()
    tol_Q = serializers.FloatField()
    representatives = RepresentativeSerializer(many=True)
    min_delta = serializers.FloatField()
    max_self_delta = serializers.FloatField()
    triangle_violation = serializers.FloatField()

    def validate(self, data):
        """Validate that there is one representative per component."""
        if len(data["representatives"]) != data["component_count"]:
            raise serializers.ValidationError("One representative per component is required.")
        return data


def _plain(value):
    """Nested OrderedDicts from validated data as plain dicts."""
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_plain(item) for item in value]
    return value


def parse_config(document):
    """Validated experiment config as plain Python data."""
    serializer = ExperimentConfigSerializer(data=document)
    serializer.is_valid(raise_exception=True)
    return _plain(serializer.validated_data)


def dump_config(config):
    return _plain(ExperimentConfigSerializer(config).data)
