from rest_framework import serializers

from .manifest import RunManifest

JSON_SCALARS = (int, float, bool, str, type(None))


def _plain(value):
    """Flag values as JSON scalars; paths become strings"""
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value if isinstance(value, JSON_SCALARS) else str(value)


class RunManifestSerializer(serializers.Serializer):
    command = serializers.CharField(max_length=50)
    options = serializers.DictField()
    master_seed = serializers.IntegerField(min_value=0, allow_null=True)
    toolkit_version = serializers.CharField(max_length=20)
    inputs = serializers.ListField(child=serializers.CharField(), default=list)
    outputs = serializers.ListField(child=serializers.CharField(), default=list)
    started_at = serializers.DateTimeField(allow_null=True)
    finished_at = serializers.DateTimeField(allow_null=True)
    arguments = serializers.ListField(child=serializers.CharField(), default=list)

    def to_representation(self, instance):
        data = super().to_representation(instance)
        data['options'] = {name: _plain(value) for name, value in instance.options.items()}
        return data

    def validate(self, attrs):
        started, finished = attrs.get('started_at'), attrs.get('finished_at')
        if started and finished and finished < started:
            raise serializers.ValidationError("finished_at is before started_at")
        return attrs

    def create(self, validated_data):
        return RunManifest(**validated_data)
