//! Built-in sensing functions and the plugin trait they implement.

use crate::e3::{E3Message, Payload, ReportPayload};
use crate::estimators::{
    band_energy_detect, music_range, peak_detect_range, periodogram_delay_doppler, EnergyDetector, MusicSpec,
    RangeMethod,
};
use crate::waveform::{CirSnapshot, OfdmConfig};

use super::DappFunction;

/// One estimator output plus its self-assessed confidence in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub payload: ReportPayload,
    pub confidence: f64,
}

/// A pluggable sensing algorithm. `process` sees frames of one stream in
/// sequence order and returns a detection whenever it has one. Errors and
/// panics are turned into error reports by the runtime.
pub trait SensingFunction: Send {
    fn process(&mut self, frame: &E3Message) -> Result<Option<Detection>, String>;
}

pub(crate) fn build(function: &DappFunction, iq_scale: f64) -> Box<dyn SensingFunction> {
    match function.clone() {
        DappFunction::Monostatic { ofdm, zero_pad } => Box::new(Monostatic { ofdm, zero_pad, iq_scale }),
        DappFunction::Ranging {
            method,
            snapshots_per_report,
            subcarrier_spacing_hz,
            music,
        } => Box::new(Ranging {
            method,
            per_report: snapshots_per_report,
            df: subcarrier_spacing_hz,
            music,
            buffer: Vec::with_capacity(snapshots_per_report),
        }),
        DappFunction::Spectrum { ofdm, detector } => Box::new(Spectrum {
            ofdm,
            detector,
            iq_scale,
        }),
    }
}

struct Monostatic {
    ofdm: OfdmConfig,
    zero_pad: usize,
    iq_scale: f64,
}

impl SensingFunction for Monostatic {
    fn process(&mut self, frame: &E3Message) -> Result<Option<Detection>, String> {
        let Payload::IqGrid(g) = &frame.payload else {
            return Err("expected an I/Q grid".into());
        };
        let grid = g.dequantize(self.ofdm, self.iq_scale, 1.0).map_err(|e| e.to_string())?;
        let est = periodogram_delay_doppler(&grid, self.zero_pad).map_err(|e| e.to_string())?;
        let mean = grid.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / grid.samples.len() as f64;
        // Share of the received energy explained by the detected echo.
        let explained = if mean > 0.0 { est.peak_power / mean } else { 0.0 };
        Ok(Some(Detection {
            payload: ReportPayload::DelayDoppler(est),
            confidence: explained.clamp(0.0, 1.0),
        }))
    }
}

struct Ranging {
    method: RangeMethod,
    per_report: usize,
    df: f64,
    music: MusicSpec,
    buffer: Vec<CirSnapshot>,
}

impl SensingFunction for Ranging {
    fn process(&mut self, frame: &E3Message) -> Result<Option<Detection>, String> {
        let Payload::CirFrame(c) = &frame.payload else {
            return Err("expected a CIR frame".into());
        };
        let snapshot = c.to_snapshot(self.df, 0.0).map_err(|e| e.to_string())?;
        self.buffer.push(snapshot);
        if self.buffer.len() < self.per_report {
            return Ok(None);
        }
        let batch = std::mem::take(&mut self.buffer);
        let est = match self.method {
            RangeMethod::Peak => peak_detect_range(&batch),
            RangeMethod::Subspace => music_range(&batch, &self.music),
        }
        .map_err(|e| e.to_string())?;
        Ok(Some(Detection {
            payload: ReportPayload::Range(est),
            confidence: 1.0,
        }))
    }
}

struct Spectrum {
    ofdm: OfdmConfig,
    detector: EnergyDetector,
    iq_scale: f64,
}

impl SensingFunction for Spectrum {
    fn process(&mut self, frame: &E3Message) -> Result<Option<Detection>, String> {
        let Payload::IqGrid(g) = &frame.payload else {
            return Err("expected an I/Q grid".into());
        };
        let grid = g
            .dequantize(self.ofdm, self.iq_scale, self.detector.noise_power)
            .map_err(|e| e.to_string())?;
        let d = band_energy_detect(&grid, &self.detector).map_err(|e| e.to_string())?;
        Ok(Some(Detection {
            payload: ReportPayload::BandOccupancy { occupied: d.occupied },
            confidence: 1.0,
        }))
    }
}
