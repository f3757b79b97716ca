"""Near-field mmWave SAR imaging and waveform-domain attack simulation."""
