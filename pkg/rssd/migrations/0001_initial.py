# Generated by Django 5.2.10 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='VaultVolume',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('root', models.CharField(max_length=500, unique=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['root'],
            },
        ),
        migrations.CreateModel(
            name='StoredSegment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('segment_id', models.PositiveBigIntegerField()),
                ('file_name', models.CharField(max_length=100)),
                ('content_digest', models.CharField(help_text='SHA-256 of the canonical serialization', max_length=64)),
                ('prev_tail_hash', models.BinaryField(max_length=32)),
                ('tail_hash', models.BinaryField(max_length=32)),
                ('first_seq', models.PositiveBigIntegerField()),
                ('last_seq', models.PositiveBigIntegerField()),
                ('page_count', models.PositiveIntegerField(default=0)),
                ('log_segment_count', models.PositiveIntegerField(default=0)),
                ('size_bytes', models.PositiveBigIntegerField(default=0)),
                ('ingested_at', models.DateTimeField(auto_now_add=True)),
                ('volume', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='segments', to='rssd.vaultvolume')),
            ],
            options={
                'ordering': ['volume', 'segment_id'],
                'indexes': [models.Index(fields=['volume', 'first_seq', 'last_seq'], name='rssd_segment_seq_idx')],
                'unique_together': {('volume', 'segment_id')},
            },
        ),
        migrations.CreateModel(
            name='StoredPageRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('record_index', models.PositiveIntegerField()),
                ('lpa', models.PositiveBigIntegerField()),
                ('write_seq', models.PositiveBigIntegerField()),
                ('timestamp', models.PositiveBigIntegerField(help_text='Simulated time, ns')),
                ('length', models.PositiveIntegerField()),
                ('digest', models.BinaryField(max_length=32)),
                ('segment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='records', to='rssd.storedsegment')),
                ('volume', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='records', to='rssd.vaultvolume')),
            ],
            options={
                'ordering': ['volume', 'lpa', 'write_seq'],
                'indexes': [models.Index(fields=['volume', 'lpa', 'write_seq'], name='rssd_record_lpa_idx')],
                'unique_together': {('volume', 'write_seq')},
            },
        ),
        migrations.CreateModel(
            name='StoredLogEntry',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('seq', models.PositiveBigIntegerField()),
                ('timestamp', models.PositiveBigIntegerField()),
                ('log_segment_id', models.PositiveBigIntegerField()),
                ('kind', models.PositiveSmallIntegerField()),
                ('lpa_start', models.PositiveBigIntegerField(blank=True, null=True)),
                ('lpa_end', models.PositiveBigIntegerField(blank=True, help_text='Exclusive', null=True)),
                ('digest', models.BinaryField(blank=True, max_length=32, null=True)),
                ('chain_hash', models.BinaryField(max_length=32)),
                ('segment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='entries', to='rssd.storedsegment')),
                ('volume', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='entries', to='rssd.vaultvolume')),
            ],
            options={
                'ordering': ['volume', 'seq'],
                'indexes': [models.Index(fields=['volume', 'kind', 'lpa_start'], name='rssd_entry_kind_idx'), models.Index(fields=['volume', 'timestamp'], name='rssd_entry_time_idx')],
                'unique_together': {('volume', 'seq')},
            },
        ),
    ]
