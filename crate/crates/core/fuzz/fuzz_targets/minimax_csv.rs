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

use hatdp::eval;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(curve) = eval::read_minimax(data) {
        assert_eq!(curve.epsilons.len(), curve.capacities.len());
        assert_eq!(curve.epsilons.len(), curve.errors.len());
        let mut out = Vec::new();
        eval::export_minimax(&curve, &mut out).unwrap();
        assert_eq!(eval::read_minimax(out.as_slice()).unwrap().len(), curve.len());
    }
});
