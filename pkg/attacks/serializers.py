from rest_framework import serializers

from pyramid.sgp import MIN_PYRAMID_SIZE
from .config import (
    DEFAULT_DIM_MAX_SCALE,
    DEFAULT_DIM_PROB,
    DEFAULT_SIM_COPIES,
    DEFAULT_TIM_KERNEL,
    DIM,
    GRAD_MODE_CHOICES,
    SIM,
    TIM,
    TRANSFORM_CHOICES,
    AttackConfig,
)

PIXEL_SCALE = 255.0


class AttackConfigSerializer(serializers.Serializer):
    """Attack flags as given on the command line; eps and alpha are on the 0-255 scale"""

    eps = serializers.FloatField(min_value=0.0, max_value=PIXEL_SCALE, default=16.0)
    iters = serializers.IntegerField(min_value=1, default=10)
    alpha = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    mu = serializers.FloatField(min_value=0.0, default=1.0)
    m = serializers.IntegerField(min_value=1, default=3)
    grad_mode = serializers.ChoiceField(choices=GRAD_MODE_CHOICES, default='chained')
    transforms = serializers.ListField(
        child=serializers.ChoiceField(choices=TRANSFORM_CHOICES), required=False, default=list
    )
    dim_prob = serializers.FloatField(min_value=0.0, max_value=1.0, default=DEFAULT_DIM_PROB)
    dim_max_scale = serializers.FloatField(min_value=1.0, default=DEFAULT_DIM_MAX_SCALE)
    tim_kernel = serializers.IntegerField(min_value=1, default=DEFAULT_TIM_KERNEL)
    sim_copies = serializers.IntegerField(min_value=1, default=DEFAULT_SIM_COPIES)
    clip_to_valid = serializers.BooleanField(default=True)
    seed = serializers.IntegerField(min_value=0, default=0)
    resize_mode = serializers.ChoiceField(choices=['bilinear', 'nearest'], default='bilinear')

    def validate_tim_kernel(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError("TIM kernel size must be odd")
        return value

    def validate_transforms(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Each transform may be given once")
        return value

    def validate(self, attrs):
        if attrs.get('alpha') == 0 and attrs['eps'] > 0:
            raise serializers.ValidationError({'alpha': "Step size must be positive"})
        return attrs

    def create(self, validated_data):
        transforms = set(validated_data['transforms'])
        alpha = validated_data.get('alpha')
        return AttackConfig(
            epsilon=validated_data['eps'] / PIXEL_SCALE,
            iterations=validated_data['iters'],
            alpha=None if alpha is None else alpha / PIXEL_SCALE,
            decay=validated_data['mu'],
            layers=validated_data['m'],
            grad_mode=validated_data['grad_mode'],
            dim_prob=validated_data['dim_prob'] if DIM in transforms else 0.0,
            dim_max_scale=validated_data['dim_max_scale'],
            tim_kernel=validated_data['tim_kernel'] if TIM in transforms else 1,
            sim_copies=validated_data['sim_copies'] if SIM in transforms else 1,
            clip_to_valid=validated_data['clip_to_valid'],
            seed=validated_data['seed'],
            resize_mode=validated_data['resize_mode'],
            min_pyramid_size=self.context.get('min_pyramid_size', MIN_PYRAMID_SIZE),
        )
