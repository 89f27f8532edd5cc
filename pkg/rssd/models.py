from django.db import models


class VaultVolume(models.Model):
    """One vault directory. Everything below is derived state rebuilt from its segment files."""
    root = models.CharField(max_length=500, unique=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['root']

    def __str__(self):
        return self.root


class StoredSegment(models.Model):
    """An ingested offload segment and the log chain position it ends at"""
    volume = models.ForeignKey(VaultVolume, on_delete=models.CASCADE, related_name='segments')
    segment_id = models.PositiveBigIntegerField()
    file_name = models.CharField(max_length=100)
    content_digest = models.CharField(max_length=64, help_text="SHA-256 of the canonical serialization")
    prev_tail_hash = models.BinaryField(max_length=32)
    tail_hash = models.BinaryField(max_length=32)
    first_seq = models.PositiveBigIntegerField()
    last_seq = models.PositiveBigIntegerField()
    page_count = models.PositiveIntegerField(default=0)
    log_segment_count = models.PositiveIntegerField(default=0)
    size_bytes = models.PositiveBigIntegerField(default=0)
    ingested_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['volume', 'segment_id']
        unique_together = [('volume', 'segment_id')]
        indexes = [models.Index(fields=['volume', 'first_seq', 'last_seq'], name='rssd_segment_seq_idx')]

    def __str__(self):
        return f"segment {self.segment_id} (seq {self.first_seq}-{self.last_seq})"


class StoredPageRecord(models.Model):
    """A retained page version held in a segment file"""
    segment = models.ForeignKey(StoredSegment, on_delete=models.CASCADE, related_name='records')
    volume = models.ForeignKey(VaultVolume, on_delete=models.CASCADE, related_name='records')
    record_index = models.PositiveIntegerField()
    lpa = models.PositiveBigIntegerField()
    write_seq = models.PositiveBigIntegerField()
    timestamp = models.PositiveBigIntegerField(help_text="Simulated time, ns")
    length = models.PositiveIntegerField()
    digest = models.BinaryField(max_length=32)

    class Meta:
        ordering = ['volume', 'lpa', 'write_seq']
        unique_together = [('volume', 'write_seq')]
        indexes = [models.Index(fields=['volume', 'lpa', 'write_seq'], name='rssd_record_lpa_idx')]

    def __str__(self):
        return f"lpa {self.lpa} @ seq {self.write_seq}"


class StoredLogEntry(models.Model):
    """Index row for one log entry; the entry itself lives in the segment file"""
    segment = models.ForeignKey(StoredSegment, on_delete=models.CASCADE, related_name='entries')
    volume = models.ForeignKey(VaultVolume, on_delete=models.CASCADE, related_name='entries')
    seq = models.PositiveBigIntegerField()
    timestamp = models.PositiveBigIntegerField()
    log_segment_id = models.PositiveBigIntegerField()
    kind = models.PositiveSmallIntegerField()
    lpa_start = models.PositiveBigIntegerField(null=True, blank=True)
    lpa_end = models.PositiveBigIntegerField(null=True, blank=True, help_text="Exclusive")
    digest = models.BinaryField(max_length=32, null=True, blank=True)
    chain_hash = models.BinaryField(max_length=32)

    class Meta:
        ordering = ['volume', 'seq']
        unique_together = [('volume', 'seq')]
        indexes = [
            models.Index(fields=['volume', 'kind', 'lpa_start'], name='rssd_entry_kind_idx'),
            models.Index(fields=['volume', 'timestamp'], name='rssd_entry_time_idx'),
        ]

    def __str__(self):
        return f"seq {self.seq} kind {self.kind}"
