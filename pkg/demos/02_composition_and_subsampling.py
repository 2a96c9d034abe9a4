"""
Mixed-domain composition and limited-label subsampling
======================================================

Shows the two dataset knobs on placeholder manifests at full corpus scale:

* a capped mixed-domain training set whose M2020 share is a proportion knob,
* stratified label-fraction subsets that nest as the fraction grows.

No image files are touched; composition operates purely on manifests.
"""
from terrainseg import (
    CompositionSpec,
    LabelFractionSpec,
    compose_mixed,
    sample_label_fraction,
)
from terrainseg.ingest import DatasetManifest
from terrainseg.taxonomy import ChannelMode, Domain, Split, TerrainSample


def placeholder_pool(n, domain):
    entries = tuple(
        TerrainSample(
            image_ref=f"/data/{domain.value.lower()}/images/{i:05d}.png",
            mask_ref=f"/data/{domain.value.lower()}/masks/{i:05d}.png",
            domain=domain,
            split=Split.TRAIN,
            channels=ChannelMode.GRAY,
        )
        for i in range(n)
    )
    return DatasetManifest(entries=entries, dataset_id=f"{domain.value.lower()}_pool")


# Pool sizes match the two-mission training corpus: 16,064 + 1,321 images.
msl = placeholder_pool(16064, Domain.MSL)
m2020 = placeholder_pool(1321, Domain.M2020)

print("proportion sweep at cap 1321 (and the same knob at cap 16064):")
for cap in (1321, 16064):
    for p in (0.0, 0.25, 0.5, 0.75, 1.0):
        manifest = compose_mixed(CompositionSpec(
            cap=cap, m2020_proportion=p, seed=0,
            source_msl=msl, source_m2020=m2020))
        counts = manifest.domain_counts()
        print(f"  cap={cap:5d} p={p:.2f} -> {counts[Domain.MSL]:5d} MSL "
              f"+ {counts[Domain.M2020]:4d} M2020 = {len(manifest)}")

print("\nlabel-fraction subsets are stratified per domain and nested:")
previous = set()
for fraction in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0):
    manifest = sample_label_fraction(LabelFractionSpec(
        fraction=fraction, seed=0, source_msl=msl, source_m2020=m2020))
    counts = manifest.domain_counts()
    members = {s.image_ref for s in manifest.entries}
    nested = "nested" if previous <= members else "NOT NESTED"
    print(f"  f={fraction:4.2f} -> {len(manifest):5d} images "
          f"({counts[Domain.MSL]} MSL + {counts[Domain.M2020]} M2020), {nested}")
    previous = members

print("\nsame seed means same manifest hash:")
spec = CompositionSpec(cap=1321, m2020_proportion=0.5, seed=42,
                       source_msl=msl, source_m2020=m2020)
print(" ", compose_mixed(spec).content_hash[:16], "==",
      compose_mixed(spec).content_hash[:16])
