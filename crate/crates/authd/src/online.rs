//! Incremental version of the offline threshold segmenter.

use std::collections::VecDeque;

use touchguard_core::capsim::Frame;
use touchguard_core::segmentation::frame_max;

/// A completed contact run.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub frames: Vec<Frame>,
}

/// Feeds frames one at a time and yields the same runs
/// [`touchguard_core::segmentation::detect_spans`] finds on the whole
/// stream, except for a run still open at the end of input. Only frames of
/// the open run are buffered, at most `capacity` of them; older frames are
/// dropped.
#[derive(Debug, Clone)]
pub struct OnlineSegmenter {
    threshold: f64,
    min_event_frames: usize,
    capacity: usize,
    next_index: usize,
    open: Option<(usize, VecDeque<Frame>)>,
}

impl OnlineSegmenter {
    pub fn new(threshold: f64, min_event_frames: usize, capacity: usize) -> Self {
        Self {
            threshold,
            min_event_frames: min_event_frames.max(1),
            capacity: capacity.max(1),
            next_index: 0,
            open: None,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.next_index
    }

    pub fn buffered(&self) -> usize {
        self.open.as_ref().map_or(0, |(_, b)| b.len())
    }

    pub fn push(&mut self, frame: Frame) -> Option<Span> {
        let i = self.next_index;
        self.next_index += 1;
        let touching = frame_max(&frame).value > self.threshold;
        match (touching, self.open.as_mut()) {
            (true, Some((start, buf))) => {
                buf.push_back(frame);
                if buf.len() > self.capacity {
                    buf.pop_front();
                    *start += 1;
                }
                None
            }
            (true, None) => {
                self.open = Some((i, VecDeque::from([frame])));
                None
            }
            (false, Some(_)) => {
                let (start, buf) = self.open.take().expect("open run");
                (buf.len() >= self.min_event_frames).then(|| Span {
                    start,
                    end: i - 1,
                    frames: buf.into(),
                })
            }
            (false, None) => None,
        }
    }
}
