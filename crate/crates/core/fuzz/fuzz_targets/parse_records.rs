//
// Copyright 2026 The hatdp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#![no_main]

use hatdp::ingest::{self, RecordFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&first, body)) = data.split_first() else { return };
    // first byte picks the dialect
    let format = RecordFormat { delimiter: if first & 1 == 0 { b',' } else { b';' } };
    let Ok(records) = ingest::parse_records(body, format) else { return };
    for drop_zero in [true, false] {
        if let Ok(b) = ingest::bucket_into_hats(&records, 65.0, drop_zero) {
            let kept: usize = b.hats.values().map(|d| d.num_samples()).sum();
            assert_eq!(kept, b.summary.accepted);
            assert!(b.summary.accepted + b.summary.zero_dropped + b.summary.over_bound_rejected == b.summary.records);
        }
    }
    if format.delimiter == b',' {
        let mut out = Vec::new();
        ingest::write_records(&mut out, &records).unwrap();
        let again = ingest::parse_records(out.as_slice(), RecordFormat::default()).unwrap();
        assert_eq!(again.len(), records.len());
    }
});
