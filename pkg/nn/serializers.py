from rest_framework import serializers

from .classifiers import ARCHITECTURE_CHOICES
from .training import TrainConfig


class TrainConfigSerializer(serializers.Serializer):
    architecture_id = serializers.ChoiceField(choices=ARCHITECTURE_CHOICES, required=False)
    epochs = serializers.IntegerField(min_value=0, default=15)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    learning_rate = serializers.FloatField(default=0.05)
    momentum = serializers.FloatField(min_value=0.0, default=0.9)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_learning_rate(self, value):
        if not value > 0:
            raise serializers.ValidationError("Learning rate must be positive")
        return value

    def validate_momentum(self, value):
        if value >= 1:
            raise serializers.ValidationError("Momentum must be below 1")
        return value

    def create(self, validated_data):
        data = dict(validated_data)
        data.pop('architecture_id', None)
        return TrainConfig(**data)
