from rest_framework import serializers

from .reports import ReportRow, format_rate


class ReportRowSerializer(serializers.Serializer):
    surrogate = serializers.CharField(max_length=200)
    attack = serializers.CharField(max_length=200)
    target = serializers.CharField(max_length=200)
    n = serializers.IntegerField(min_value=0)
    fooled = serializers.IntegerField(min_value=0)
    rate = serializers.FloatField(min_value=0.0, max_value=1.0)

    def validate(self, attrs):
        if attrs['fooled'] > attrs['n']:
            raise serializers.ValidationError("fooled cannot exceed n")
        expected = attrs['fooled'] / attrs['n'] if attrs['n'] else 0.0
        if format_rate(attrs['rate']) != format_rate(expected):
            raise serializers.ValidationError(
                f"rate {format_rate(attrs['rate'])} does not match fooled/n = {format_rate(expected)}"
            )
        return attrs

    def create(self, validated_data):
        return ReportRow(
            validated_data['surrogate'],
            validated_data['attack'],
            validated_data['target'],
            validated_data['n'],
            validated_data['fooled'],
        )
